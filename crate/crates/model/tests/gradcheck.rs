mod common;

use factorspan_core::builder::WeightScheme;
use factorspan_core::schema::{Schema, SchemaVersion};
use factorspan_model::gradcheck::{check_gradients, GradCheckConfig};
use factorspan_model::heads::ModelKind;
use factorspan_model::trainer::class_weight_vector;

#[test]
fn every_head_matches_finite_differences() {
    for kind in ModelKind::ALL {
        let (mut ck, data) = common::setup(kind, 32, 11);
        ck.model.encoder.cfg.dropout = 0.0;
        let weights = class_weight_vector(&data.sentences, &Schema::new(SchemaVersion::V2), WeightScheme::Log).unwrap();
        let report =
            check_gradients(&ck.model, &mut ck.store, &data.examples[..4], weights.as_deref(), &GradCheckConfig::default())
                .unwrap();
        println!("{kind}: {}/{} worst {:?}", report.passed, report.checked, report.worst);
        for f in report.failures.iter().take(10) {
            println!("  {f:?}");
        }
        assert!(report.pass_rate() >= 0.99, "{kind}: pass rate {}", report.pass_rate());
    }
}
