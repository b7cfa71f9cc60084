fn main() {
    std::process::exit(mudich::cli::main_entry());
}
