use clap::Parser;

fn main() -> std::process::ExitCode {
    asysvrg::cli::main_with(asysvrg::cli::Cli::parse())
}
