#![no_main]

use ensemble_gp::data_io::{read_csv, read_features_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = read_csv(data, "Product_Sold") {
        assert!(ds.n_rows() >= 1 && ds.n_features() >= 1);
        assert!(ds.features().iter().chain(ds.target().iter()).all(|v| v.is_finite()));

        // Reading back the parsed feature columns by name must agree.
        let (x, y) = read_features_csv(data, ds.feature_names(), Some("Product_Sold")).unwrap();
        assert_eq!(&x, ds.features());
        assert_eq!(y.as_ref(), Some(ds.target()));
    }
});
