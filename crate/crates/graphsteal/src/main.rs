use clap::Parser;
use graphsteal::cli::{run, CliArgs};

fn main() {
    let args = match CliArgs::try_parse() {
        Ok(args) => args,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                let _ = e.print();
                std::process::exit(2);
            }
            let _ = e.print();
            std::process::exit(0);
        }
    };
    std::process::exit(run(args));
}
