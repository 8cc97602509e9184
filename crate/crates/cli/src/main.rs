use clap::Parser;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = bmckde_cli::Cli::parse();
    match bmckde_cli::run(&cli, &argv) {
        Ok(s) => {
            println!("{}", s.message);
            println!("wrote {} files to {}", s.files.len(), s.dir.display());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
