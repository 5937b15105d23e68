use clap::Parser;

fn main() {
    let cli = match acdl_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            let err = acdl_cli::CliError::usage("usage", e.kind().to_string());
            eprintln!("{}", err.line());
            std::process::exit(err.code());
        }
    };
    let mut log = |line: &str| println!("{line}");
    if let Err(err) = acdl_cli::run(cli, &mut log) {
        eprintln!("{}", err.line());
        std::process::exit(err.code());
    }
}
