use clap::Parser;
use sdwave::cli::{main_with, Args, EXIT_INVALID_CONFIG};

fn main() {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID_CONFIG
            } else {
                0
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(main_with(&args));
}
