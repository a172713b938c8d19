fn main() {
    std::process::exit(peakbound::cli::run());
}
