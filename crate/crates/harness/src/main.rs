use std::process::ExitCode;

fn main() -> ExitCode {
    match equiformer_harness::cli::run(std::env::args_os(), &mut std::io::stdout()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
