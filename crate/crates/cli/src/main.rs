use clap::Parser;

fn main() {
    let cli = anoise_cli::Cli::parse();
    match anoise_cli::run(cli) {
        Ok(out) if out.ends_with('\n') => print!("{out}"),
        Ok(out) => println!("{out}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
