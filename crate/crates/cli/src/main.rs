use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match envbench_cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { envbench_cli::exit::USAGE } else { envbench_cli::exit::OK });
        }
    };
    std::process::exit(envbench_cli::run(cli));
}
