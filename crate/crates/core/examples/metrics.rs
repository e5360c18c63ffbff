//! Accuracy, precision, recall and F1 for a handful of predictions, under
//! both averaging modes.

use misinfo::eval::{confusion, evaluate, Averaging};

fn main() -> misinfo::Result<()> {
    let labels = [1, 1, 1, 0, 0, 1, 0, 1, 0, 0];
    let preds = [1, 0, 1, 0, 1, 1, 0, 1, 0, 0];
    let cm = confusion(&preds, &labels, 1)?;
    println!("tp {} tn {} fp {} fn {}", cm.tp, cm.tn, cm.fp, cm.fn_);
    for averaging in [Averaging::PositiveClass, Averaging::Macro] {
        let m = evaluate(&preds, &labels, averaging)?;
        println!(
            "{:<14} accuracy {:.3}  precision {:.3}  recall {:.3}  f1 {:.3}",
            averaging.name(),
            m.accuracy,
            m.precision,
            m.recall,
            m.f1
        );
    }
    Ok(())
}
