fn main() {
    std::process::exit(coupled_sa::cli::main_entry());
}
