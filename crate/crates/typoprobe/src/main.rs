fn main() {
    std::process::exit(typoprobe::cli::main_entry());
}
