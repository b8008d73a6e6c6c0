use clap::Parser;
use ibner_cli::args::Cli;
use ibner_cli::error::EXIT_USAGE;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = match Cli::try_parse() {
        Ok(cli) => match ibner_cli::run(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                0
            }
        }
    };
    std::process::exit(code);
}
