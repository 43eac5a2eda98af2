fn main() {
    std::process::exit(selmer_lab::cli::run(std::env::args_os()));
}
