fn main() {
    std::process::exit(traffic_forecast::cli::run(std::env::args_os()));
}
