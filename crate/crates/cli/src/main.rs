use clap::Parser;
use tomoforge_cli::cli::Cli;

fn main() {
    let code = tomoforge_cli::finish(Cli::try_parse(), |cli| {
        let level = match cli.verbose {
            0 => "warn",
            1 => "info",
            _ => "debug",
        };
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    });
    std::process::exit(code);
}
