use clap::Parser;

fn main() {
    let cli = qednet_cli::Cli::parse();
    std::process::exit(qednet_cli::run(&cli));
}
