use clap::Parser;

fn main() -> std::process::ExitCode {
    qkdn_sim::cli::execute(qkdn_sim::cli::Cli::parse())
}
