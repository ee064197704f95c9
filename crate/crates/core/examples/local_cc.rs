//! Local cross-correlation between a volume and deformed copies of it, plus
//! the full loss report for one pair of flows.

use invreg::grid::Shape3;
use invreg::loss::{local_cc, total_loss, LossConfig};
use invreg::synth::{gaussian_flow, make_pair, make_phantom, Bump};
use invreg::FlowField3;

fn main() -> invreg::Result<()> {
    let shape = Shape3::cube(24);
    let phantom = make_phantom(shape, 2)?;
    for amplitude in [0.0, 1.0, 2.0, 3.0] {
        let bump = Bump { center: [12.0, 12.0, 12.0], amplitude: [amplitude, 0.0, 0.0], sigma: 5.0 };
        let (s, t, _, _) = make_pair(&phantom, &gaussian_flow(shape, &[bump])?)?;
        for window in [3, 5, 9] {
            println!("amplitude {amplitude}  window {window}  CC {:.5}", local_cc(&s, &t, window)?);
        }
    }

    let bump = Bump { center: [12.0, 12.0, 12.0], amplitude: [2.0, 0.0, 0.0], sigma: 5.0 };
    let truth = gaussian_flow(shape, &[bump])?;
    let (s, t, _, _) = make_pair(&phantom, &truth)?;
    let zero = FlowField3::zeros(shape);
    // negating a small smooth flow gives a rough inverse
    let approx_inverse = FlowField3::new(shape, truth.data().iter().map(|d| -d).collect())?;
    let cfg = LossConfig::default();
    println!("zero flows: {:?}", total_loss(&s, &t, &zero, &zero, &cfg)?);
    println!("true flows: {:?}", total_loss(&s, &t, &truth, &approx_inverse, &cfg)?);
    Ok(())
}
