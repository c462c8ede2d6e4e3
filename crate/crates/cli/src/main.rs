use clap::Parser;

fn main() {
    let cli = atacom_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = atacom_cli::run(cli, &mut stdout) {
        eprintln!("atacom: {e}");
        std::process::exit(e.exit_code());
    }
}
