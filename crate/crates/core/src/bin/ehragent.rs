use std::io;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let argv: Vec<String> = std::env::args().collect();
    let code = ehragent::cli::dispatch(&argv, &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(code);
}
