use clap::Parser;

fn main() {
    let cli = frobenius_kdv_cli::Cli::parse();
    std::process::exit(frobenius_kdv_cli::run(cli));
}
