fn main() {
    std::process::exit(mivae::cli::main_entry());
}
