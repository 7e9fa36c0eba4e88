fn main() {
    std::process::exit(thermoplate::cli::main_with(std::env::args_os()));
}
