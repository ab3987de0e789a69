use misdetect::fusion::GateMode;
use misdetect::gradcheck::{check_model, ModelCheck};
use misdetect::losses::InfoNceVariant;
use misdetect::params::Group;

#[test]
fn total_loss_gradients_match_finite_differences_per_group() {
    for gate in [GateMode::Elementwise, GateMode::Scalar] {
        for infonce in [InfoNceVariant::Standard, InfoNceVariant::Literal] {
            let opts = ModelCheck {
                gate,
                infonce,
                ..ModelCheck::default()
            };
            let report = check_model(&opts).unwrap();
            assert_eq!(report.iter().map(|r| r.group).collect::<Vec<_>>(), Group::ALL);
            for r in report {
                assert!(r.checked > 0);
                assert!(
                    r.max_rel_err <= 1e-4,
                    "{gate} {infonce:?} {}: {:e} at {}",
                    r.group,
                    r.max_rel_err,
                    r.worst_param
                );
            }
        }
    }
}

#[test]
fn report_is_deterministic() {
    let a = check_model(&ModelCheck::default()).unwrap();
    let b = check_model(&ModelCheck::default()).unwrap();
    assert_eq!(a, b);
}
