use std::process::ExitCode;

fn main() -> ExitCode {
    match bge_cli::run(std::env::args()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
