fn main() {
    let code = styleswap::cli::run_from(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
