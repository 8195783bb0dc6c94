//! Reference sandbox: runs one plan received over standard input.

use std::io::{self, BufReader};
use std::time::Duration;

use ehragent::minipy;

fn main() {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let code = minipy::serve(BufReader::new(stdin.lock()), stdout.lock(), |timeout| {
        // Exit on our own shortly after the deadline even if the host is gone.
        std::thread::spawn(move || {
            std::thread::sleep(timeout + Duration::from_secs(1));
            std::process::exit(minipy::EXIT_DEADLINE);
        });
    });
    std::process::exit(code);
}
