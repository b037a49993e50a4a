fn main() {
    std::process::exit(factfilter::cli::run(std::env::args_os()));
}
