//! Synthetic demo corpus: an eight-row BOM, a 25-activity LCA database, a
//! small datasheet pool, gold labels and canned LLM replies.
//!
//! Emission factors are illustrative numbers, not measurements. The gold
//! labels and canned replies are arranged so that, with the local-hash
//! embedder, adding LLM context and datasheets visibly improves Hits@5.
//! That ordering is engineered to exercise the evaluation harness; it says
//! nothing about real model quality.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::docmatch::EmbeddedPool;
use crate::embedding::{LocalHashEmbedder, DEFAULT_LOCAL_DIM};
use crate::ingest::{self, BomDelimiter, GoldLabel, IngestError};
use crate::llm::{build_prompt, CannedLlm};
use crate::model::{ActivityId, BomEntry, ComponentId, Datasheet, LcaActivity};

pub const DEMO_SEED: u64 = 42;
pub const DEMO_THRESHOLD: f64 = 0.5;

pub const BOM_FILE: &str = "bom.csv";
pub const DB_FILE: &str = "lca.jsonl";
pub const GOLD_FILE: &str = "gold.jsonl";
pub const DATASHEET_DIR: &str = "datasheets";
pub const LLM_FIXTURES_FILE: &str = "llm_fixtures.jsonl";

const EAF_DESCRIPTION: &str = "This process models the production of steel using an electric arc furnace (EAF) within the European Union. The process includes the melting of recycled steel scrap and the subsequent refinement to meet industry-grade specifications. Electricity consumption and emissions are based on averages from EU-wide data. Additional inputs include limestone for slag formation and oxygen for decarburization. Outputs include steel billets ready for further processing and slag as a by-product for use in construction applications.\n\nThis dataset represents a cradle-to-gate assessment, capturing the production of steel billets up to the point of factory gate, excluding downstream processing (e.g., rolling or shaping). Energy mix and emission profiles align with EU 27 averages for 2023.";

/// (id, name, description, nominal factor, unit)
const ACTIVITIES: [(&str, &str, &str, f64, &str); 25] = [
    ("a01", "Steel production, electric arc furnace, EU", EAF_DESCRIPTION, 0.65, "kg CO2e/kg"),
    ("a02", "Steel production, converter, unalloyed", "Production of unalloyed carbon steel in a basic oxygen furnace from pig iron and scrap, followed by continuous casting into slabs and billets. Typical grades are carbon steels for shafts and machined parts.", 1.9, "kg CO2e/kg"),
    ("a03", "Steel production, converter, low-alloyed", "Production of low-alloyed steel by the basic oxygen route with additions of chromium, molybdenum and manganese. Used for quenched and tempered parts such as high-strength bolts, studs and fasteners.", 2.1, "kg CO2e/kg"),
    ("a04", "Steel production, chromium steel 18/8", "Production of austenitic stainless steel with 18% chromium and 8% nickel in an electric arc furnace with argon oxygen decarburisation.", 4.5, "kg CO2e/kg"),
    ("a05", "Cast iron production", "Production of grey cast iron with lamellar graphite in a cupola or induction furnace from pig iron, steel scrap and coke. The liquid iron is poured into sand moulds to make housings, rings and machine bases.", 1.5, "kg CO2e/kg"),
    ("a06", "Ductile iron casting", "Casting of spheroidal graphite iron parts including melting, magnesium treatment for nodular graphite and sand moulding.", 1.8, "kg CO2e/kg"),
    ("a07", "Aluminium production, primary, ingot", "Primary aluminium from alumina by Hall-Heroult electrolysis, cast into ingots. Dominated by electricity consumption of the smelter.", 16.5, "kg CO2e/kg"),
    ("a08", "Aluminium alloy production, AlMg3", "Production of wrought aluminium magnesium alloy from primary and secondary aluminium with magnesium additions.", 8.0, "kg CO2e/kg"),
    ("a09", "Copper production, primary", "Primary copper from sulfidic ore via flotation, smelting, converting and electrolytic refining to cathodes.", 4.0, "kg CO2e/kg"),
    ("a10", "Brass production", "Melting of copper and zinc into brass alloy and casting into bars for machining of fittings.", 3.2, "kg CO2e/kg"),
    ("a11", "Zinc coating, pieces", "Electrolytic zinc plating of small steel pieces such as screws, bolts and studs, including degreasing, pickling, galvanic zinc deposition and clear passivation.", 3.0, "kg CO2e/m2"),
    ("a12", "Electrophoretic coating, steel parts", "Cathodic electrodeposition of an epoxy primer onto pretreated steel parts. Includes alkaline degreasing, zinc phosphating, rinsing, electrocoating in a dip tank and curing in a convection oven.", 2.4, "kg CO2e/m2"),
    ("a13", "Powder coating, steel", "Electrostatic application of polyester powder paint onto steel sheet parts with subsequent curing in a gas-fired oven.", 2.9, "kg CO2e/m2"),
    ("a14", "Polypropylene production, granulate", "Polymerisation of propylene to polypropylene granulate in a gas phase reactor, including monomer production from naphtha.", 1.6, "kg CO2e/kg"),
    ("a15", "Polypropylene production, film or sheet", "Extrusion of polypropylene granulate into cast or biaxially oriented film and sheet, including the production of the granulate.", 2.2, "kg CO2e/kg"),
    ("a16", "Polyester film production, coating", "Production of polyethylene terephthalate film from ethylene glycol and terephthalic acid with a subsequent surface coating step.", 3.1, "kg CO2e/kg"),
    ("a17", "Polyethylene terephthalate production, granulate, amorphous", "Polycondensation of purified terephthalic acid and ethylene glycol to amorphous polyethylene terephthalate granulate.", 2.7, "kg CO2e/kg"),
    ("a18", "Nylon 6 production", "Production of polyamide 6 by ring-opening polymerisation of caprolactam, delivered as granulate for injection moulding.", 9.1, "kg CO2e/kg"),
    ("a19", "Synthetic rubber production", "Emulsion polymerisation of styrene and butadiene to synthetic rubber for seals, gaskets and hoses.", 2.8, "kg CO2e/kg"),
    ("a20", "Glass fibre production", "Melting of silica sand, limestone and boron minerals and drawing of continuous glass filaments for reinforcement.", 2.6, "kg CO2e/kg"),
    ("a21", "Lubricating oil production", "Refining of vacuum distillate into base oil and blending with additives to produce lubricating oil.", 1.1, "kg CO2e/kg"),
    ("a22", "Printed wiring board production, surface mounted", "Manufacture of a mounted printed wiring board including laminate, copper etching, solder mask and surface mount assembly.", 45.0, "kg CO2e/kg"),
    ("a23", "Hot rolling, steel", "Reheating of steel slabs and hot rolling into plate, strip and bar. Covers only the forming step, not steel making.", 0.3, "kg CO2e/kg"),
    ("a24", "Wire drawing, steel", "Cold drawing of steel wire rod through dies to wire for springs, nails and cold headed screws.", 0.4, "kg CO2e/kg"),
    ("a25", "Forging, steel", "Closed-die forging of steel bars into shafts and flanges, including heating in a gas furnace and trimming.", 0.9, "kg CO2e/kg"),
];

/// BOM rows: (name, material, supplier, gold activity).
const COMPONENTS: [(&str, &str, &str, &str); 8] = [
    (
        "SPIRALGEHÄUSE",
        "EN-GJL-250/A48 CL 35B",
        "Mechatronik GmbH",
        "a05",
    ),
    ("WELLE", "C45+N", "Technikbau AG", "a02"),
    (
        "SPALTRING",
        "JL/GUSSEISEN LAMELLENGRAFIT",
        "GussForm Solutions",
        "a05",
    ),
    (
        "SPANNRING",
        "STAHL+KATAPHORESE",
        "StahlPro Engineering",
        "a12",
    ),
    (
        "SPALTRING",
        "JL/GUSSEISEN LAMELLENGRAFIT",
        "GussTech Industries",
        "a05",
    ),
    ("STIFTSCHRAUBE", "8.8", "FixFast Components", "a03"),
    ("STIFTSCHRAUBE", "8.8", "SchraubenWerk AG", "a03"),
    ("STIFTSCHRAUBE", "5.8+A2A", "PrecisionParts GmbH", "a11"),
];

const DATASHEETS: [(&str, &str); 4] = [
    (
        "ibitech57.txt",
        "Ibitech 57 coated Normalausführung 2 mm weiss\nWoven polypropylene fabric with a white synthetic resin coating.\nBasis weight 570 g/m2, thickness 2 mm, roll width 1.6 m.\nUV stabilised, for tarpaulins and covers.",
    ),
    (
        "spannring_stahlpro.txt",
        "SPANNRING\nStahlPro Engineering\nSTAHL+KATAPHORESE\nClamping ring, steel S235 with KTL cataphoresis coating.\nCathodic dip paint, epoxy, black, 20 µm.",
    ),
    (
        "stiftschraube_precisionparts.txt",
        "STIFTSCHRAUBE\nPrecisionParts GmbH\n5.8+A2A\nStud bolt M12, property class 5.8.\nSurface A2A: electrolytic zinc, clear passivated.",
    ),
    (
        "welle_technikbau.txt",
        "WELLE\nTechnikbau AG\nC45+N\nDrive shaft, unalloyed steel C45, normalized.\nTurned and ground, diameter 40 mm.",
    ),
];

/// Canned replies per component: (without datasheet, with datasheet).
/// `None` for the second means no datasheet is expected to match.
const REPLIES: [(&str, Option<&str>); 8] = [
    (
        "Activity name: Cast iron production\n\nActivity information:\n\nSpiral casing cast from grey cast iron EN-GJL-250 (ASTM A48 class 35B) with lamellar graphite. Iron is melted from pig iron and scrap and poured into sand moulds.",
        None,
    ),
    (
        "Activity name: Forging, steel\n\nActivity information:\n\nShaft made of C45 carbon steel, normalized. Bars are heated and forged into shafts before machining.",
        Some("Activity name: Steel production, converter, unalloyed\n\nActivity information:\n\nDrive shaft of unalloyed carbon steel C45 in normalized condition, assumed to be produced by the basic oxygen route from pig iron and scrap and cast into billets before turning and grinding."),
    ),
    (
        "Activity name: Cast iron production\n\nActivity information:\n\nSplit ring cast from grey cast iron with lamellar graphite (GJL), melted in a cupola or induction furnace and poured into sand moulds.",
        None,
    ),
    (
        "Activity name: Steel production, converter, unalloyed\n\nActivity information:\n\nClamping ring made of plain carbon steel, assumed to be produced from pig iron and scrap in a basic oxygen furnace.",
        Some("Activity name: Electrophoretic coating, steel parts\n\nActivity information:\n\nSteel clamping ring coated by cathodic electrodeposition (cataphoresis, KTL) of an epoxy primer. The process includes degreasing, zinc phosphating, electrocoating in a dip tank and oven curing."),
    ),
    (
        "Activity name: Cast iron production\n\nActivity information:\n\nSplit ring of grey cast iron with lamellar graphite, produced by melting pig iron and steel scrap and casting into sand moulds.",
        None,
    ),
    (
        "Activity name: Steel production, converter, low-alloyed\n\nActivity information:\n\nStud bolt of property class 8.8, made from low-alloyed steel with manganese and chromium, quenched and tempered for high strength.",
        None,
    ),
    (
        "Activity name: Steel production, converter, low-alloyed\n\nActivity information:\n\nHigh-strength stud bolt, property class 8.8, low-alloyed quenched and tempered steel with chromium and molybdenum additions.",
        None,
    ),
    (
        "Activity name: Wire drawing, steel\n\nActivity information:\n\nStud bolt of property class 5.8 cold headed from drawn steel wire.",
        Some("Activity name: Zinc coating, pieces\n\nActivity information:\n\nStud bolt M12 of property class 5.8 with surface A2A, i.e. electrolytic zinc plating with clear passivation applied to small steel pieces after degreasing and pickling."),
    ),
];

/// Everything needed for an offline end-to-end run.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoCorpus {
    pub bom: Vec<BomEntry>,
    pub activities: Vec<LcaActivity>,
    pub datasheets: Vec<Datasheet>,
    pub gold: Vec<GoldLabel>,
    pub canned: CannedLlm,
}

/// Builds the corpus. The seed varies quantities and emission factors;
/// texts, ids and labels are fixed.
pub fn generate_demo_corpus(seed: u64) -> DemoCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let activities: Vec<LcaActivity> = ACTIVITIES
        .iter()
        .map(|(id, name, description, nominal, unit)| {
            let jitter: f64 = rng.random_range(0.9..1.1);
            LcaActivity {
                id: ActivityId::from(*id),
                name: (*name).to_owned(),
                description: (*description).to_owned(),
                emission_factor: (nominal * jitter * 1000.0).round() / 1000.0,
                unit: (*unit).to_owned(),
            }
        })
        .collect();

    let bom: Vec<BomEntry> = COMPONENTS
        .iter()
        .enumerate()
        .map(|(i, (name, material, supplier, _))| {
            let quantity = if *name == "STIFTSCHRAUBE" {
                rng.random_range(4..=12)
            } else {
                rng.random_range(1..=2)
            };
            BomEntry::new(format!("c{}", i + 1), *name, *material, *supplier)
                .with_quantity(f64::from(quantity))
        })
        .collect();

    let gold = COMPONENTS
        .iter()
        .enumerate()
        .map(|(i, (.., activity))| GoldLabel::new(ComponentId(format!("c{}", i + 1)), *activity))
        .collect();

    let datasheets: Vec<Datasheet> = DATASHEETS
        .iter()
        .map(|(filename, body)| Datasheet::new(*filename, *body))
        .collect();

    let canned = canned_replies(&bom, &datasheets);

    DemoCorpus {
        bom,
        activities,
        datasheets,
        gold,
        canned,
    }
}

/// Keys every reply by the exact prompt the pipeline will send: the plain
/// prompt for every component, plus the datasheet prompt wherever the
/// default local-hash embedder selects a sheet.
fn canned_replies(bom: &[BomEntry], datasheets: &[Datasheet]) -> CannedLlm {
    let embedder = LocalHashEmbedder::new(DEFAULT_LOCAL_DIM).expect("valid dim");
    let pool = EmbeddedPool::<f32>::new(datasheets, &embedder).expect("demo datasheets embed");
    let mut canned = CannedLlm::new();
    for (entry, (plain, with_sheet)) in bom.iter().zip(REPLIES) {
        canned.insert_prompt(&build_prompt(entry, None), plain);
        let selected = pool
            .select(entry, &embedder, DEMO_THRESHOLD)
            .expect("demo query embeds");
        if let Some(m) = selected {
            canned.insert_prompt(
                &build_prompt(entry, Some(m.sheet)),
                with_sheet.unwrap_or(plain),
            );
        }
    }
    canned
}

impl DemoCorpus {
    /// Writes the corpus in the ingest formats: `bom.csv` (semicolon),
    /// `lca.jsonl`, `gold.jsonl`, `datasheets/*.txt`, `llm_fixtures.jsonl`.
    pub fn write_to(&self, dir: &Path) -> Result<(), IngestError> {
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|source| IngestError::Io { path, source })
        };
        std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write(
            BOM_FILE,
            ingest::write_bom(&self.bom, BomDelimiter::Semicolon),
        )?;
        write(DB_FILE, ingest::write_lca_db(&self.activities))?;
        write(GOLD_FILE, ingest::write_gold_labels(&self.gold))?;
        write(LLM_FIXTURES_FILE, self.canned.to_jsonl())?;
        ingest::write_datasheets(&dir.join(DATASHEET_DIR), &self.datasheets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_activities, validate_bom};
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(generate_demo_corpus(42), generate_demo_corpus(42));
        assert_ne!(
            generate_demo_corpus(42).activities,
            generate_demo_corpus(7).activities
        );
    }

    #[test]
    fn contains_reference_rows() {
        let c = generate_demo_corpus(DEMO_SEED);
        assert_eq!(c.bom.len(), 8);
        assert_eq!(c.activities.len(), 25);
        assert_eq!(c.datasheets.len(), 4);
        assert_eq!(c.gold.len(), 8);
        assert!(c.bom.iter().any(|e| e.name == "SPIRALGEHÄUSE"));
        assert!(c
            .activities
            .iter()
            .any(|a| a.name == "Steel production, electric arc furnace, EU"));
        assert!(c
            .datasheets
            .iter()
            .any(|d| d.body.contains("Woven polypropylene")));
    }

    #[test]
    fn corpus_is_valid_and_labels_resolve() {
        let c = generate_demo_corpus(DEMO_SEED);
        assert!(validate_bom(&c.bom).is_empty());
        assert!(validate_activities(&c.activities).is_empty());
        let ids: HashSet<_> = c.activities.iter().map(|a| &a.id).collect();
        assert!(c.gold.iter().all(|g| ids.contains(&g.activity_id)));
    }

    #[test]
    fn intended_datasheets_match() {
        let c = generate_demo_corpus(DEMO_SEED);
        let embedder = LocalHashEmbedder::new(DEFAULT_LOCAL_DIM).unwrap();
        let pool = EmbeddedPool::<f32>::new(&c.datasheets, &embedder).unwrap();
        for (entry, (_, with_sheet)) in c.bom.iter().zip(REPLIES) {
            let m = pool.select(entry, &embedder, DEMO_THRESHOLD).unwrap();
            assert_eq!(
                m.is_some(),
                with_sheet.is_some(),
                "{}: {:?}",
                entry.id,
                m.map(|m| (m.sheet.filename.clone(), m.score))
            );
        }
        // Plain prompts for all eight, plus three datasheet prompts.
        assert_eq!(c.canned.len(), 11);
    }
}
