fn main() {
    let code = qvote::cli::execute(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
