fn main() {
    std::process::exit(ctr_forge::cli::run());
}
