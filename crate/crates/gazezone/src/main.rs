use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use gazezone::cli::{run, Cli};

fn init_logging() {
    // One record per line: `ts=... level=INFO target=... msg="..."`.
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "ts={} level={} target={} msg={:?}",
                buf.timestamp_millis(),
                record.level(),
                record.target(),
                record.args().to_string()
            )
        })
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
