fn main() {
    if let Err(err) = advlatent::cli::run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
