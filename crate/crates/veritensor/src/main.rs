fn main() {
    std::process::exit(veritensor::cli::run(std::env::args_os()));
}
