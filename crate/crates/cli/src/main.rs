use clap::Parser;

use handrift_cli::{run, Cli, ExitCode};

/// Caps the worker pool; unset or unparsable means rayon's default.
const THREADS_VAR: &str = "HANDRIFT_THREADS";

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version requests are not errors
            std::process::exit(if e.use_stderr() { ExitCode::Usage as i32 } else { 0 });
        }
    };
    if let Some(n) = std::env::var(THREADS_VAR).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    if let Err(f) = run(cli) {
        eprintln!("error: {f}");
        std::process::exit(f.code as i32);
    }
}
