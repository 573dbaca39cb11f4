fn main() {
    std::process::exit(xsensor_cli::main_with_args(std::env::args_os()));
}
