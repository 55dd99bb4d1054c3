fn main() {
    if let Err(e) = maskexplain::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
