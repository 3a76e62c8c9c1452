//! Dimensional constants at n = 7 with their independent cross-checks.

use blowup_lab::constants::compute_all;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let c = compute_all(7)?;
    for (name, e) in c.entries() {
        let check = e.cross_check.map(|v| format!("{v:.15e} ({})", e.cross_check_route.as_deref().unwrap_or("-"))).unwrap_or_else(|| "-".into());
        println!("{name:>7} = {:.15e}  err {:.1e}  check {check}", e.value, e.error);
    }
    for (k, v) in &c.notes {
        println!("{k}: {v}");
    }
    Ok(())
}
