use super::DspError;

/// The 19 scalp electrodes of the 10–20 system used by the montage.
pub const ELECTRODES_10_20: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
];

/// One bipolar derivation: `anode − cathode`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MontagePair {
    pub anode: &'static str,
    pub cathode: &'static str,
}

const fn pair(anode: &'static str, cathode: &'static str) -> MontagePair {
    MontagePair { anode, cathode }
}

/// Longitudinal 18-pair ("double banana") montage.
pub const DEFAULT_MONTAGE: [MontagePair; 18] = [
    pair("Fp1", "F7"),
    pair("F7", "T3"),
    pair("T3", "T5"),
    pair("T5", "O1"),
    pair("Fp2", "F8"),
    pair("F8", "T4"),
    pair("T4", "T6"),
    pair("T6", "O2"),
    pair("Fp1", "F3"),
    pair("F3", "C3"),
    pair("C3", "P3"),
    pair("P3", "O1"),
    pair("Fp2", "F4"),
    pair("F4", "C4"),
    pair("C4", "P4"),
    pair("P4", "O2"),
    pair("Fz", "Cz"),
    pair("Cz", "Pz"),
];

/// Montage as CSV `index,anode,cathode`.
pub fn montage_csv(montage: &[MontagePair]) -> String {
    let mut out = String::from("index,anode,cathode\n");
    for (i, p) in montage.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", p.anode, p.cathode));
    }
    out
}

/// Row `i` of the result is `signal(anode_i) − signal(cathode_i)`.
pub fn to_bipolar<S: AsRef<str>>(electrodes: &[S], rows: &[Vec<f64>], montage: &[MontagePair]) -> Result<Vec<Vec<f64>>, DspError> {
    let find = |name: &str| {
        electrodes
            .iter()
            .position(|e| e.as_ref() == name)
            .ok_or_else(|| DspError::MissingElectrode(name.to_string()))
    };
    montage
        .iter()
        .map(|p| {
            if p.anode == p.cathode {
                return Err(DspError::InvalidMontage(format!("{} paired with itself", p.anode)));
            }
            let (a, c) = (&rows[find(p.anode)?], &rows[find(p.cathode)?]);
            Ok(a.iter().zip(c).map(|(x, y)| x - y).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn default_montage_covers_all_electrodes() {
        let used: BTreeSet<&str> = DEFAULT_MONTAGE.iter().flat_map(|p| [p.anode, p.cathode]).collect();
        let all: BTreeSet<&str> = ELECTRODES_10_20.into_iter().collect();
        assert_eq!(used, all);
        assert_eq!(DEFAULT_MONTAGE.len(), 18);
        assert!(DEFAULT_MONTAGE.iter().all(|p| p.anode != p.cathode));
    }

    #[test]
    fn subtraction_and_self_cancellation() {
        let names = ["Fp1", "F7", "T3"];
        let rows = vec![vec![3.0; 4], vec![1.0; 4], vec![1.0; 4]];
        let out = to_bipolar(&names, &rows, &[pair("Fp1", "F7"), pair("F7", "T3")]).unwrap();
        assert_eq!(out, vec![vec![2.0; 4], vec![0.0; 4]]);
    }

    #[test]
    fn standard_montage_gives_eighteen_rows() {
        let rows: Vec<Vec<f64>> = (0..19).map(|i| vec![i as f64; 3]).collect();
        assert_eq!(to_bipolar(&ELECTRODES_10_20, &rows, &DEFAULT_MONTAGE).unwrap().len(), 18);
    }

    #[test]
    fn missing_electrode_is_named() {
        let names: Vec<&str> = ELECTRODES_10_20.iter().copied().filter(|&e| e != "Cz").collect();
        let rows = vec![vec![0.0; 3]; 18];
        assert_eq!(to_bipolar(&names, &rows, &DEFAULT_MONTAGE).unwrap_err(), DspError::MissingElectrode("Cz".into()));
    }

    #[test]
    fn csv_layout() {
        let csv = montage_csv(&DEFAULT_MONTAGE);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,anode,cathode");
        assert_eq!(lines[1], "0,Fp1,F7");
        assert_eq!(lines[18], "17,Cz,Pz");
    }
}
