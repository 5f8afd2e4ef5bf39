fn main() {
    std::process::exit(dialog_rank::cli::run(std::env::args_os()));
}
