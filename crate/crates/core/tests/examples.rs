macro_rules! example {
    ($name:ident, $test:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/examples/",
                stringify!($name),
                ".rs"
            ));
        }

        #[test]
        fn $test() {
            $name::run_example().expect("example should run");
        }
    };
}

example!(theorem_check, theorem_check_runs);
example!(gradient_ascent, gradient_ascent_runs);
example!(tabular_opgd, tabular_opgd_runs);
example!(nn_gradcheck, nn_gradcheck_runs);
example!(drive_sim, drive_sim_runs);
example!(udp_roundtrip, udp_roundtrip_runs);
example!(train_agents, train_agents_runs);
example!(verify_suites, verify_suites_runs);
