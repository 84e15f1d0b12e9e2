use autoint_cli::{run, Cli};
use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AUTOINT_LOG", "error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Some(report)) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
