//! Protocol-conforming stand-in for the external trainer, used in tests
//! and demos: `stub-trainer [options] train|infer <jobdir>`.

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(structa_core::engine::stub::run_cli(&args));
}
