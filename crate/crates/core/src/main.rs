fn main() {
    prosody_rl::cli::init_logging();
    let code = prosody_rl::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
