fn main() {
    std::process::exit(qtensor::cli::main_with_args(std::env::args_os()));
}
