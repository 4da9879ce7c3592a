use clap::Parser;
use nncdcl_cli::{run, Cli, EXIT_USAGE};

fn main() {
    let code = match Cli::try_parse() {
        Ok(cli) => run(cli),
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
