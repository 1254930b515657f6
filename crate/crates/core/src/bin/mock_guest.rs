//! Stand-in guest runner speaking the sandbox wire protocol on stdio.

use std::io;
use std::process::ExitCode;

use toolloop_core::mock_guest::{serve, MockOptions};

fn main() -> ExitCode {
    let opts = match MockOptions::from_args(std::env::args().skip(1)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let stdin = io::stdin();
    match serve(stdin.lock(), io::stdout().lock(), &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mock guest: {e}");
            ExitCode::FAILURE
        }
    }
}
