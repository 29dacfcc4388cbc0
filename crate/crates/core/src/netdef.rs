//! Metabolic-network and reactor description: file format, validation and
//! the derived structure every other module consumes.
//!
//! Networks are written as TOML with one table per entity:
//!
//! ```toml
//! [species.glc]
//! compartment = "extracellular"
//! role = "metabolite"
//! mw_g_per_mmol = 0.180
//! substrate = true
//!
//! [reaction.v_glc]
//! stoich = { glc = -1.0, pyr = 2.0, atp = 2.0, nadh = 2.0 }
//! catalyst = "e_glc"
//! kcat_per_h = 30000.0
//! kind = "transport"
//!
//! [quota]
//! fraction = 0.67
//! species = "q"
//!
//! [regulated.atpase]
//! hill = { alpha = 2e-6, beta = 1e-4, K = 0.138, delta = 2.490 }
//! degradation_per_h = 0.063
//! synthesis_reaction = "syn_atpase"
//!
//! [reactor]
//! path_length_m = 0.022
//! attenuation_m2_per_g = 0.01
//! vL_max_L = 45.0
//! feed = { glc = 2220.0 }
//! ```
//!
//! Species and reaction order is file order and is preserved through
//! serialization, so two parses of the same bytes produce identical
//! orderings everywhere downstream (state vectors, flux vectors, CSV columns).

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compartment {
    Extracellular,
    Intracellular,
    Biomass,
}

impl Compartment {
    fn as_str(self) -> &'static str {
        match self {
            Compartment::Extracellular => "extracellular",
            Compartment::Intracellular => "intracellular",
            Compartment::Biomass => "biomass",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    RegulatedProtein,
    Enzyme,
    Ribosome,
    Quota,
    Metabolite,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::RegulatedProtein => "regulated-protein",
            Role::Enzyme => "enzyme",
            Role::Ribosome => "ribosome",
            Role::Quota => "quota",
            Role::Metabolite => "metabolite",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Species {
    pub id: String,
    pub compartment: Compartment,
    /// g/mmol; required for biomass species (the vector b).
    pub mw: Option<f64>,
    pub role: Role,
    /// Only flagged extracellular species may appear in the feed.
    pub substrate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactionKind {
    Transport,
    Metabolic,
    BiomassProducing,
}

impl ReactionKind {
    fn as_str(self) -> &'static str {
        match self {
            ReactionKind::Transport => "transport",
            ReactionKind::Metabolic => "metabolic",
            ReactionKind::BiomassProducing => "biomass-producing",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reaction {
    pub id: String,
    /// (species index, signed coefficient), in file order.
    pub stoich: Vec<(usize, f64)>,
    pub catalyst: Option<usize>,
    /// 1/h; present iff catalyst is.
    pub kcat: Option<f64>,
    /// mM/h
    pub vmin: f64,
    pub vmax: f64,
    pub kind: ReactionKind,
}

impl Reaction {
    pub fn reversible(&self) -> bool {
        self.vmin < 0.0
    }
}

/// Hill dose-response parameters: eta(I) = alpha + beta I^delta / (K^delta + I^delta).
#[derive(Debug, Clone, Copy)]
pub struct HillParams {
    /// basal rate, mmol/g/h
    pub alpha: f64,
    /// maximal induced rate, mmol/g/h
    pub beta: f64,
    /// half-saturation, W/m^2
    pub k_half: f64,
    /// steepness (dimensionless)
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct RegulatedProteinSpec {
    pub species: usize,
    pub hill: HillParams,
    /// first-order turnover, 1/h
    pub degradation: f64,
    /// reaction whose flux is pinned to the gross expression rate
    pub synthesis_reaction: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QuotaSpec {
    pub fraction: f64,
    pub species: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct InputBounds {
    /// W/m^2
    pub light: [f64; 2],
    /// L/h
    pub feed: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct StateBounds {
    pub v_l: [f64; 2],
    /// per species index; concentrations default to [0, inf)
    pub species: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct ReactorConfig {
    /// light path length l, m
    pub path_length: f64,
    /// attenuation a_lambda, m^2/g
    pub attenuation: f64,
    /// L
    pub v_l_max: f64,
    /// feed concentrations, (species index, mM)
    pub feed: Vec<(usize, f64)>,
    pub input_bounds: InputBounds,
    pub state_bounds: StateBounds,
}

/// Parsed, validated network with derived index structure.
#[derive(Debug, Clone)]
pub struct MetabolicNetwork {
    pub species: Vec<Species>,
    pub reactions: Vec<Reaction>,
    pub quota: QuotaSpec,
    pub regulated: Vec<RegulatedProteinSpec>,
    pub reactor: ReactorConfig,
    /// extracellular species indices, file order
    pub z_species: Vec<usize>,
    /// intracellular (quasi-steady-state) species indices
    pub m_species: Vec<usize>,
    /// biomass species indices: regulated proteins first (in `regulated`
    /// order), then unregulated in file order
    pub p_species: Vec<usize>,
    /// molecular weights aligned with `p_species`, g/mmol
    pub b: Vec<f64>,
    /// for each unregulated catalytic species (index into p_species),
    /// the reactions it catalyzes
    pub catalysis_unr: Vec<(usize, Vec<usize>)>,
    /// for each regulated protein (index into `regulated`), the reactions it
    /// catalyzes
    pub catalysis_reg: Vec<Vec<usize>>,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{entity}: {message}")]
    Semantic { entity: String, message: String },
}

fn semantic(entity: impl Into<String>, message: impl Into<String>) -> NetworkError {
    NetworkError::Semantic { entity: entity.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub severity: Severity,
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.entity, self.message)
    }
}

impl MetabolicNetwork {
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn n_z(&self) -> usize {
        self.z_species.len()
    }

    pub fn n_m(&self) -> usize {
        self.m_species.len()
    }

    pub fn n_p(&self) -> usize {
        self.p_species.len()
    }

    pub fn n_reg(&self) -> usize {
        self.regulated.len()
    }

    pub fn n_unr(&self) -> usize {
        self.n_p() - self.n_reg()
    }

    pub fn species_index(&self, id: &str) -> Option<usize> {
        self.species.iter().position(|s| s.id == id)
    }

    pub fn reaction_index(&self, id: &str) -> Option<usize> {
        self.reactions.iter().position(|r| r.id == id)
    }

    /// Signed coefficient of species `sp` in reaction `rxn` (0 if absent).
    pub fn stoich_coef(&self, sp: usize, rxn: usize) -> f64 {
        self.reactions[rxn]
            .stoich
            .iter()
            .find(|(s, _)| *s == sp)
            .map(|(_, c)| *c)
            .unwrap_or(0.0)
    }

    /// Dense stoichiometric matrix restricted to the given species rows.
    fn dense_rows(&self, rows: &[usize]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&sp| (0..self.n_reactions()).map(|r| self.stoich_coef(sp, r)).collect())
            .collect()
    }

    /// S_z: n_z x n_V
    pub fn s_z(&self) -> Vec<Vec<f64>> {
        self.dense_rows(&self.z_species)
    }

    /// S_m: n_m x n_V
    pub fn s_m(&self) -> Vec<Vec<f64>> {
        self.dense_rows(&self.m_species)
    }

    /// S_p: n_p x n_V (regulated rows first, matching `p_species`)
    pub fn s_p(&self) -> Vec<Vec<f64>> {
        self.dense_rows(&self.p_species)
    }

    /// Position of a species inside the p-vector, if it is a biomass species.
    pub fn p_position(&self, sp: usize) -> Option<usize> {
        self.p_species.iter().position(|&s| s == sp)
    }

    /// Position of a species inside the z-vector.
    pub fn z_position(&self, sp: usize) -> Option<usize> {
        self.z_species.iter().position(|&s| s == sp)
    }

    /// Position of the quota species inside the p-vector.
    pub fn quota_p_position(&self) -> usize {
        self.p_position(self.quota.species).expect("quota species is biomass")
    }
}

// ---------------------------------------------------------------------------
// parsing

fn table<'a>(v: &'a toml::Value, entity: &str) -> Result<&'a toml::map::Map<String, toml::Value>, NetworkError> {
    v.as_table().ok_or_else(|| semantic(entity, "expected a table"))
}

fn req_f64(t: &toml::map::Map<String, toml::Value>, entity: &str, key: &str) -> Result<f64, NetworkError> {
    t.get(key)
        .ok_or_else(|| semantic(entity, format!("missing required field `{key}`")))?
        .as_float()
        .or_else(|| t.get(key).and_then(|v| v.as_integer()).map(|i| i as f64))
        .ok_or_else(|| semantic(entity, format!("field `{key}` must be a number")))
}

fn opt_f64(t: &toml::map::Map<String, toml::Value>, entity: &str, key: &str) -> Result<Option<f64>, NetworkError> {
    match t.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_float()
            .or_else(|| v.as_integer().map(|i| i as f64))
            .map(Some)
            .ok_or_else(|| semantic(entity, format!("field `{key}` must be a number"))),
    }
}

fn req_str<'a>(t: &'a toml::map::Map<String, toml::Value>, entity: &str, key: &str) -> Result<&'a str, NetworkError> {
    t.get(key)
        .ok_or_else(|| semantic(entity, format!("missing required field `{key}`")))?
        .as_str()
        .ok_or_else(|| semantic(entity, format!("field `{key}` must be a string")))
}

fn bounds_pair(v: &toml::Value, entity: &str, key: &str) -> Result<[f64; 2], NetworkError> {
    let arr = v
        .as_array()
        .ok_or_else(|| semantic(entity, format!("`{key}` must be a two-element array")))?;
    if arr.len() != 2 {
        return Err(semantic(entity, format!("`{key}` must be a two-element array")));
    }
    let get = |i: usize| -> Result<f64, NetworkError> {
        arr[i]
            .as_float()
            .or_else(|| arr[i].as_integer().map(|x| x as f64))
            .ok_or_else(|| semantic(entity, format!("`{key}` entries must be numbers")))
    };
    Ok([get(0)?, get(1)?])
}

/// Parse and validate a network document.
pub fn parse_network(text: &str) -> Result<MetabolicNetwork, NetworkError> {
    let doc: toml::Value = text
        .parse()
        .map_err(|e: toml::de::Error| NetworkError::Syntax(e.to_string()))?;
    let root = table(&doc, "document")?;

    // species, in file order (the toml map preserves insertion order)
    let mut species: Vec<Species> = vec![];
    let mut species_by_id: HashMap<String, usize> = HashMap::new();
    let species_tbl = root
        .get("species")
        .ok_or_else(|| semantic("document", "missing [species.*] tables"))?;
    for (id, body) in table(species_tbl, "species")? {
        let entity = format!("species.{id}");
        let t = table(body, &entity)?;
        if species_by_id.contains_key(id) {
            return Err(semantic(&entity, "duplicate species id"));
        }
        let compartment = match req_str(t, &entity, "compartment")? {
            "extracellular" => Compartment::Extracellular,
            "intracellular" => Compartment::Intracellular,
            "biomass" => Compartment::Biomass,
            other => return Err(semantic(&entity, format!("unknown compartment `{other}`"))),
        };
        let role = match req_str(t, &entity, "role")? {
            "regulated-protein" => Role::RegulatedProtein,
            "enzyme" => Role::Enzyme,
            "ribosome" => Role::Ribosome,
            "quota" => Role::Quota,
            "metabolite" => Role::Metabolite,
            other => return Err(semantic(&entity, format!("unknown role `{other}`"))),
        };
        let mw = opt_f64(t, &entity, "mw_g_per_mmol")?;
        if compartment == Compartment::Biomass {
            match mw {
                None => return Err(semantic(&entity, "biomass species requires `mw_g_per_mmol`")),
                Some(m) if m <= 0.0 => {
                    return Err(semantic(&entity, "molecular weight must be positive"))
                }
                _ => {}
            }
        }
        let substrate = t.get("substrate").and_then(|v| v.as_bool()).unwrap_or(false);
        species_by_id.insert(id.clone(), species.len());
        species.push(Species { id: id.clone(), compartment, mw, role, substrate });
    }

    // reactions
    let mut reactions: Vec<Reaction> = vec![];
    let mut reaction_by_id: HashMap<String, usize> = HashMap::new();
    let reactions_tbl = root
        .get("reaction")
        .ok_or_else(|| semantic("document", "missing [reaction.*] tables"))?;
    for (id, body) in table(reactions_tbl, "reaction")? {
        let entity = format!("reaction.{id}");
        let t = table(body, &entity)?;
        if reaction_by_id.contains_key(id) {
            return Err(semantic(&entity, "duplicate reaction id"));
        }
        let stoich_tbl = t
            .get("stoich")
            .ok_or_else(|| semantic(&entity, "missing `stoich` table"))?;
        let mut stoich = vec![];
        for (sp_id, coef) in table(stoich_tbl, &entity)? {
            let sp = *species_by_id
                .get(sp_id)
                .ok_or_else(|| semantic(&entity, format!("stoich references undeclared species `{sp_id}`")))?;
            let c = coef
                .as_float()
                .or_else(|| coef.as_integer().map(|i| i as f64))
                .ok_or_else(|| semantic(&entity, format!("stoich coefficient of `{sp_id}` must be a number")))?;
            stoich.push((sp, c));
        }
        let catalyst = match t.get("catalyst") {
            None => None,
            Some(v) => {
                let cid = v
                    .as_str()
                    .ok_or_else(|| semantic(&entity, "`catalyst` must be a species id string"))?;
                Some(*species_by_id.get(cid).ok_or_else(|| {
                    semantic(&entity, format!("catalyst references undeclared species `{cid}`"))
                })?)
            }
        };
        let kcat = opt_f64(t, &entity, "kcat_per_h")?;
        match (catalyst, kcat) {
            (Some(_), None) => {
                return Err(semantic(&entity, "`kcat_per_h` is required when a catalyst is given"))
            }
            (None, Some(_)) => {
                return Err(semantic(&entity, "`kcat_per_h` given without a `catalyst`"))
            }
            (Some(_), Some(k)) if k <= 0.0 => {
                return Err(semantic(&entity, "`kcat_per_h` must be positive"))
            }
            _ => {}
        }
        let vmin = opt_f64(t, &entity, "vmin")?.unwrap_or(0.0);
        let vmax = opt_f64(t, &entity, "vmax")?.unwrap_or(f64::INFINITY);
        if vmin > vmax {
            return Err(semantic(&entity, format!("vmin {vmin} exceeds vmax {vmax}")));
        }
        let kind = match t.get("kind") {
            None => ReactionKind::Metabolic,
            Some(v) => match v.as_str() {
                Some("transport") => ReactionKind::Transport,
                Some("metabolic") => ReactionKind::Metabolic,
                Some("biomass-producing") => ReactionKind::BiomassProducing,
                _ => return Err(semantic(&entity, "unknown reaction `kind`")),
            },
        };
        reaction_by_id.insert(id.clone(), reactions.len());
        reactions.push(Reaction { id: id.clone(), stoich, catalyst, kcat, vmin, vmax, kind });
    }

    // quota
    let quota_tbl = root.get("quota").ok_or_else(|| semantic("document", "missing [quota]"))?;
    let qt = table(quota_tbl, "quota")?;
    let fraction = req_f64(qt, "quota", "fraction")?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(semantic("quota", format!("quota fraction out of [0,1]: {fraction}")));
    }
    let q_species_id = req_str(qt, "quota", "species")?;
    let q_species = *species_by_id
        .get(q_species_id)
        .ok_or_else(|| semantic("quota", format!("unknown species `{q_species_id}`")))?;
    let quota = QuotaSpec { fraction, species: q_species };

    // regulated proteins
    let mut regulated = vec![];
    if let Some(reg_tbl) = root.get("regulated") {
        for (id, body) in table(reg_tbl, "regulated")? {
            let entity = format!("regulated.{id}");
            let t = table(body, &entity)?;
            let sp = *species_by_id
                .get(id.as_str())
                .ok_or_else(|| semantic(&entity, format!("unknown species `{id}`")))?;
            let hill_tbl = t.get("hill").ok_or_else(|| semantic(&entity, "missing `hill` table"))?;
            let ht = table(hill_tbl, &entity)?;
            let hill = HillParams {
                alpha: req_f64(ht, &entity, "alpha")?,
                beta: req_f64(ht, &entity, "beta")?,
                k_half: req_f64(ht, &entity, "K")?,
                delta: req_f64(ht, &entity, "delta")?,
            };
            if hill.alpha < 0.0 || hill.beta < 0.0 || hill.k_half <= 0.0 || hill.delta <= 0.0 {
                return Err(semantic(&entity, "hill parameters must satisfy alpha,beta >= 0 and K,delta > 0"));
            }
            let degradation = req_f64(t, &entity, "degradation_per_h")?;
            if degradation < 0.0 {
                return Err(semantic(&entity, "degradation rate must be nonnegative"));
            }
            let syn_id = req_str(t, &entity, "synthesis_reaction")?;
            let synthesis_reaction = *reaction_by_id
                .get(syn_id)
                .ok_or_else(|| semantic(&entity, format!("unknown synthesis reaction `{syn_id}`")))?;
            regulated.push(RegulatedProteinSpec { species: sp, hill, degradation, synthesis_reaction });
        }
    }

    // reactor
    let reactor_tbl = root.get("reactor").ok_or_else(|| semantic("document", "missing [reactor]"))?;
    let rt = table(reactor_tbl, "reactor")?;
    let path_length = req_f64(rt, "reactor", "path_length_m")?;
    let attenuation = req_f64(rt, "reactor", "attenuation_m2_per_g")?;
    let v_l_max = req_f64(rt, "reactor", "vL_max_L")?;
    if path_length <= 0.0 {
        return Err(semantic("reactor", "path length must be positive"));
    }
    if attenuation < 0.0 {
        return Err(semantic("reactor", "attenuation must be nonnegative"));
    }
    let mut feed = vec![];
    if let Some(feed_tbl) = rt.get("feed") {
        for (sp_id, conc) in table(feed_tbl, "reactor.feed")? {
            let sp = *species_by_id
                .get(sp_id)
                .ok_or_else(|| semantic("reactor.feed", format!("unknown species `{sp_id}`")))?;
            let c = conc
                .as_float()
                .or_else(|| conc.as_integer().map(|i| i as f64))
                .ok_or_else(|| semantic("reactor.feed", format!("feed concentration of `{sp_id}` must be a number")))?;
            feed.push((sp, c));
        }
    }
    let input_bounds = match rt.get("input_bounds") {
        None => InputBounds { light: [0.0, 1.0], feed: [0.0, 1.0] },
        Some(v) => {
            let t = table(v, "reactor.input_bounds")?;
            InputBounds {
                light: t
                    .get("light")
                    .map(|v| bounds_pair(v, "reactor.input_bounds", "light"))
                    .transpose()?
                    .unwrap_or([0.0, 1.0]),
                feed: t
                    .get("feed")
                    .map(|v| bounds_pair(v, "reactor.input_bounds", "feed"))
                    .transpose()?
                    .unwrap_or([0.0, 1.0]),
            }
        }
    };
    let mut state_bounds = StateBounds {
        v_l: [1e-9, v_l_max],
        species: vec![[0.0, f64::INFINITY]; species.len()],
    };
    if let Some(v) = rt.get("state_bounds") {
        let t = table(v, "reactor.state_bounds")?;
        if let Some(vl) = t.get("vL") {
            state_bounds.v_l = bounds_pair(vl, "reactor.state_bounds", "vL")?;
        }
        for (key, val) in t {
            if key == "vL" {
                continue;
            }
            let sp = *species_by_id.get(key).ok_or_else(|| {
                semantic("reactor.state_bounds", format!("unknown species `{key}`"))
            })?;
            state_bounds.species[sp] = bounds_pair(val, "reactor.state_bounds", key)?;
        }
    }
    let reactor = ReactorConfig { path_length, attenuation, v_l_max, feed, input_bounds, state_bounds };

    finalize(species, reactions, quota, regulated, reactor)
}

/// Assemble derived structure and run error-level validation.
fn finalize(
    species: Vec<Species>,
    reactions: Vec<Reaction>,
    quota: QuotaSpec,
    regulated: Vec<RegulatedProteinSpec>,
    reactor: ReactorConfig,
) -> Result<MetabolicNetwork, NetworkError> {
    let z_species: Vec<usize> = (0..species.len())
        .filter(|&i| species[i].compartment == Compartment::Extracellular)
        .collect();
    let m_species: Vec<usize> = (0..species.len())
        .filter(|&i| species[i].compartment == Compartment::Intracellular)
        .collect();
    let reg_set: Vec<usize> = regulated.iter().map(|r| r.species).collect();
    let mut p_species = reg_set.clone();
    for i in 0..species.len() {
        if species[i].compartment == Compartment::Biomass && !reg_set.contains(&i) {
            p_species.push(i);
        }
    }
    let b: Vec<f64> = p_species
        .iter()
        .map(|&i| species[i].mw.expect("validated: biomass species has mw"))
        .collect();

    // catalysis maps
    let mut catalysis_unr: Vec<(usize, Vec<usize>)> = vec![];
    for (pi, &sp) in p_species.iter().enumerate() {
        if reg_set.contains(&sp) {
            continue;
        }
        let rxns: Vec<usize> = (0..reactions.len())
            .filter(|&r| reactions[r].catalyst == Some(sp))
            .collect();
        if !rxns.is_empty() {
            catalysis_unr.push((pi, rxns));
        }
    }
    let catalysis_reg: Vec<Vec<usize>> = regulated
        .iter()
        .map(|r| {
            (0..reactions.len())
                .filter(|&x| reactions[x].catalyst == Some(r.species))
                .collect()
        })
        .collect();

    let net = MetabolicNetwork {
        species,
        reactions,
        quota,
        regulated,
        reactor,
        z_species,
        m_species,
        p_species,
        b,
        catalysis_unr,
        catalysis_reg,
    };

    // reject error-level diagnostics at parse time
    if let Some(d) = validate_network(&net).into_iter().find(|d| d.severity == Severity::Error) {
        return Err(semantic(d.entity, d.message));
    }
    Ok(net)
}

/// Structural validation; returns an empty list iff every invariant holds.
///
/// Warnings flag constructs that are legal but worth attention (an
/// uncatalyzed metabolic reaction is only constrained by its box bounds).
pub fn validate_network(net: &MetabolicNetwork) -> Vec<Diagnostic> {
    let mut out = vec![];
    let err = |entity: &str, message: String| Diagnostic {
        severity: Severity::Error,
        entity: entity.to_string(),
        message,
    };
    let warn = |entity: &str, message: String| Diagnostic {
        severity: Severity::Warning,
        entity: entity.to_string(),
        message,
    };

    if !(0.0..=1.0).contains(&net.quota.fraction) {
        out.push(err("quota", format!("quota fraction out of [0,1]: {}", net.quota.fraction)));
    }
    if net.species[net.quota.species].compartment != Compartment::Biomass {
        out.push(err("quota", "quota species must be a biomass species".into()));
    }

    for sp in &net.species {
        if sp.compartment == Compartment::Biomass {
            match sp.mw {
                None => out.push(err(&format!("species.{}", sp.id), "biomass species missing molecular weight".into())),
                Some(m) if m <= 0.0 => {
                    out.push(err(&format!("species.{}", sp.id), "molecular weight must be positive".into()))
                }
                _ => {}
            }
        }
        if sp.substrate && sp.compartment != Compartment::Extracellular {
            out.push(err(&format!("species.{}", sp.id), "only extracellular species can be substrates".into()));
        }
    }

    for rxn in &net.reactions {
        let entity = format!("reaction.{}", rxn.id);
        if rxn.vmin > rxn.vmax {
            out.push(err(&entity, format!("vmin {} exceeds vmax {}", rxn.vmin, rxn.vmax)));
        }
        if let Some(k) = rxn.kcat {
            if k <= 0.0 {
                out.push(err(&entity, "kcat must be positive".into()));
            }
        }
        if rxn.catalyst.is_some() != rxn.kcat.is_some() {
            out.push(err(&entity, "catalyst and kcat must be given together".into()));
        }
        if rxn.kind == ReactionKind::BiomassProducing {
            let n_pos_biomass = rxn
                .stoich
                .iter()
                .filter(|(sp, c)| *c > 0.0 && net.species[*sp].compartment == Compartment::Biomass)
                .count();
            if n_pos_biomass != 1 {
                out.push(err(
                    &entity,
                    format!("biomass-producing reaction must produce exactly one biomass species (found {n_pos_biomass})"),
                ));
            }
        }
        if rxn.kind == ReactionKind::Metabolic && rxn.catalyst.is_none() {
            out.push(warn(&entity, "uncatalyzed metabolic reaction: only box bounds constrain it".into()));
        }
    }

    for (ri, reg) in net.regulated.iter().enumerate() {
        let entity = format!("regulated.{}", net.species[reg.species].id);
        if net.species[reg.species].compartment != Compartment::Biomass {
            out.push(err(&entity, "regulated protein must be a biomass species".into()));
        }
        if net.catalysis_reg[ri].is_empty() {
            out.push(err(&entity, "regulated protein catalyzes no reaction; its capacity equality would be vacuous".into()));
        }
        let syn = &net.reactions[reg.synthesis_reaction];
        let produces = syn.stoich.iter().any(|(sp, c)| *sp == reg.species && *c > 0.0);
        if !produces {
            out.push(err(&entity, format!("synthesis reaction `{}` does not produce the protein", syn.id)));
        }
        let h = &reg.hill;
        if h.alpha < 0.0 || h.beta < 0.0 || h.k_half <= 0.0 || h.delta <= 0.0 || reg.degradation < 0.0 {
            out.push(err(&entity, "hill/degradation parameters out of range".into()));
        }
    }

    for (sp, conc) in &net.reactor.feed {
        let s = &net.species[*sp];
        if !s.substrate {
            out.push(err("reactor.feed", format!("feed contains `{}` which is not flagged as a substrate", s.id)));
        }
        if *conc < 0.0 {
            out.push(err("reactor.feed", format!("negative feed concentration for `{}`", s.id)));
        }
    }
    if net.reactor.state_bounds.v_l[0] > net.reactor.state_bounds.v_l[1] {
        out.push(err("reactor.state_bounds", "vL bounds inverted".into()));
    }

    out
}

// ---------------------------------------------------------------------------
// serialization

fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if x == x.trunc() && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

/// Emit a document that parses back to an equal network (field by field),
/// preserving species/reaction order.
pub fn serialize_network(net: &MetabolicNetwork) -> String {
    let mut out = String::new();
    use std::fmt::Write;
    for sp in &net.species {
        writeln!(out, "[species.{}]", sp.id).unwrap();
        writeln!(out, "compartment = \"{}\"", sp.compartment.as_str()).unwrap();
        writeln!(out, "role = \"{}\"", sp.role.as_str()).unwrap();
        if let Some(mw) = sp.mw {
            writeln!(out, "mw_g_per_mmol = {}", fmt_f64(mw)).unwrap();
        }
        if sp.substrate {
            writeln!(out, "substrate = true").unwrap();
        }
        out.push('\n');
    }
    for rxn in &net.reactions {
        writeln!(out, "[reaction.{}]", rxn.id).unwrap();
        let stoich: Vec<String> = rxn
            .stoich
            .iter()
            .map(|(sp, c)| format!("{} = {}", net.species[*sp].id, fmt_f64(*c)))
            .collect();
        writeln!(out, "stoich = {{ {} }}", stoich.join(", ")).unwrap();
        if let Some(cat) = rxn.catalyst {
            writeln!(out, "catalyst = \"{}\"", net.species[cat].id).unwrap();
            writeln!(out, "kcat_per_h = {}", fmt_f64(rxn.kcat.unwrap())).unwrap();
        }
        if rxn.vmin != 0.0 {
            writeln!(out, "vmin = {}", fmt_f64(rxn.vmin)).unwrap();
        }
        if rxn.vmax != f64::INFINITY {
            writeln!(out, "vmax = {}", fmt_f64(rxn.vmax)).unwrap();
        }
        writeln!(out, "kind = \"{}\"", rxn.kind.as_str()).unwrap();
        out.push('\n');
    }
    writeln!(out, "[quota]").unwrap();
    writeln!(out, "fraction = {}", fmt_f64(net.quota.fraction)).unwrap();
    writeln!(out, "species = \"{}\"", net.species[net.quota.species].id).unwrap();
    out.push('\n');
    for reg in &net.regulated {
        writeln!(out, "[regulated.{}]", net.species[reg.species].id).unwrap();
        writeln!(
            out,
            "hill = {{ alpha = {}, beta = {}, K = {}, delta = {} }}",
            fmt_f64(reg.hill.alpha),
            fmt_f64(reg.hill.beta),
            fmt_f64(reg.hill.k_half),
            fmt_f64(reg.hill.delta)
        )
        .unwrap();
        writeln!(out, "degradation_per_h = {}", fmt_f64(reg.degradation)).unwrap();
        writeln!(out, "synthesis_reaction = \"{}\"", net.reactions[reg.synthesis_reaction].id).unwrap();
        out.push('\n');
    }
    writeln!(out, "[reactor]").unwrap();
    writeln!(out, "path_length_m = {}", fmt_f64(net.reactor.path_length)).unwrap();
    writeln!(out, "attenuation_m2_per_g = {}", fmt_f64(net.reactor.attenuation)).unwrap();
    writeln!(out, "vL_max_L = {}", fmt_f64(net.reactor.v_l_max)).unwrap();
    if !net.reactor.feed.is_empty() {
        let feed: Vec<String> = net
            .reactor
            .feed
            .iter()
            .map(|(sp, c)| format!("{} = {}", net.species[*sp].id, fmt_f64(*c)))
            .collect();
        writeln!(out, "feed = {{ {} }}", feed.join(", ")).unwrap();
    }
    out.push('\n');
    writeln!(out, "[reactor.input_bounds]").unwrap();
    let ib = &net.reactor.input_bounds;
    writeln!(out, "light = [{}, {}]", fmt_f64(ib.light[0]), fmt_f64(ib.light[1])).unwrap();
    writeln!(out, "feed = [{}, {}]", fmt_f64(ib.feed[0]), fmt_f64(ib.feed[1])).unwrap();
    out.push('\n');
    writeln!(out, "[reactor.state_bounds]").unwrap();
    let sb = &net.reactor.state_bounds;
    writeln!(out, "vL = [{}, {}]", fmt_f64(sb.v_l[0]), fmt_f64(sb.v_l[1])).unwrap();
    for (i, b) in sb.species.iter().enumerate() {
        if *b != [0.0, f64::INFINITY] {
            writeln!(out, "{} = [{}, {}]", net.species[i].id, fmt_f64(b[0]), fmt_f64(b[1])).unwrap();
        }
    }
    out
}

/// Field-by-field equality used by the round-trip property.
pub fn networks_equal(a: &MetabolicNetwork, b: &MetabolicNetwork) -> bool {
    if a.species.len() != b.species.len() || a.reactions.len() != b.reactions.len() {
        return false;
    }
    for (x, y) in a.species.iter().zip(&b.species) {
        if x.id != y.id
            || x.compartment != y.compartment
            || x.mw != y.mw
            || x.role != y.role
            || x.substrate != y.substrate
        {
            return false;
        }
    }
    for (x, y) in a.reactions.iter().zip(&b.reactions) {
        if x.id != y.id
            || x.stoich != y.stoich
            || x.catalyst != y.catalyst
            || x.kcat != y.kcat
            || x.vmin != y.vmin
            || x.vmax != y.vmax
            || x.kind != y.kind
        {
            return false;
        }
    }
    if a.quota.fraction != b.quota.fraction || a.quota.species != b.quota.species {
        return false;
    }
    if a.regulated.len() != b.regulated.len() {
        return false;
    }
    for (x, y) in a.regulated.iter().zip(&b.regulated) {
        if x.species != y.species
            || x.hill.alpha != y.hill.alpha
            || x.hill.beta != y.hill.beta
            || x.hill.k_half != y.hill.k_half
            || x.hill.delta != y.hill.delta
            || x.degradation != y.degradation
            || x.synthesis_reaction != y.synthesis_reaction
        {
            return false;
        }
    }
    let (ra, rb) = (&a.reactor, &b.reactor);
    ra.path_length == rb.path_length
        && ra.attenuation == rb.attenuation
        && ra.v_l_max == rb.v_l_max
        && ra.feed == rb.feed
        && ra.input_bounds.light == rb.input_bounds.light
        && ra.input_bounds.feed == rb.input_bounds.feed
        && ra.state_bounds.v_l == rb.state_bounds.v_l
        && ra.state_bounds.species == rb.state_bounds.species
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::REDUCED_LACTATE_NETWORK;

    #[test]
    fn bundled_network_has_expected_shape() {
        let net = parse_network(REDUCED_LACTATE_NETWORK).unwrap();
        assert_eq!(net.n_z(), 5);
        let z_ids: Vec<&str> = net.z_species.iter().map(|&i| net.species[i].id.as_str()).collect();
        assert_eq!(z_ids, ["glc", "lac", "for", "succ", "co2"]);
        assert_eq!(net.n_m(), 5);
        assert_eq!(net.n_p(), 7);
        assert_eq!(net.n_reg(), 1);
        assert_eq!(net.p_species[0], net.regulated[0].species);
        // quota fraction and species wired up
        assert_eq!(net.quota.fraction, 0.67);
        assert_eq!(net.species[net.quota.species].id, "q");
        // reversible lactate branch is the only one
        let rev: Vec<&str> = net
            .reactions
            .iter()
            .filter(|r| r.reversible())
            .map(|r| r.id.as_str())
            .collect();
        assert_eq!(rev, ["v_lac"]);
    }

    #[test]
    fn bundled_network_validates_clean() {
        let net = parse_network(REDUCED_LACTATE_NETWORK).unwrap();
        let diags = validate_network(&net);
        assert!(diags.is_empty(), "unexpected diagnostics: {diags:?}");
    }

    #[test]
    fn undeclared_species_is_named_in_the_error() {
        let text = r#"
[species.a]
compartment = "extracellular"
role = "metabolite"

[reaction.r1]
stoich = { X = -1.0 }

[quota]
fraction = 0.5
species = "a"

[reactor]
path_length_m = 0.01
attenuation_m2_per_g = 0.0
vL_max_L = 1.0
"#;
        let err = parse_network(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("X"), "error does not name the species: {msg}");
    }

    #[test]
    fn quota_fraction_out_of_range_is_rejected() {
        let text = REDUCED_LACTATE_NETWORK.replace("fraction = 0.67", "fraction = 1.2");
        let err = parse_network(&text).unwrap_err();
        assert!(err.to_string().contains("quota fraction out of [0,1]"), "{err}");
    }

    #[test]
    fn duplicate_reaction_id_is_rejected_by_toml_or_us() {
        let dup = format!(
            "{}\n[reaction.v_glc]\nstoich = {{ glc = -1.0 }}\nkind = \"metabolic\"\n",
            REDUCED_LACTATE_NETWORK
        );
        assert!(parse_network(&dup).is_err());
    }

    #[test]
    fn missing_molecular_weight_on_biomass_species_fails() {
        let text = REDUCED_LACTATE_NETWORK.replace("mw_g_per_mmol = 2700.0\n", "");
        let err = parse_network(&text).unwrap_err();
        assert!(err.to_string().contains("mw_g_per_mmol"), "{err}");
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_network("[species.a\ncompartment=").unwrap_err();
        match err {
            NetworkError::Syntax(msg) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("expected syntax error, got {other}"),
        }
    }

    #[test]
    fn uncatalyzed_metabolic_reaction_warns() {
        let text = REDUCED_LACTATE_NETWORK.replace(
            "stoich = { atp = -1.0 }\ncatalyst = \"atpase\"\nkcat_per_h = 40000.0",
            "stoich = { atp = -1.0 }",
        );
        // removing the atpase catalyst also makes the regulated protein
        // catalyze nothing, which is an error
        let err = parse_network(&text).unwrap_err();
        assert!(err.to_string().contains("catalyzes no reaction"), "{err}");

        // an extra uncatalyzed metabolic reaction only warns
        let text2 = format!(
            "{}\n[reaction.leak]\nstoich = {{ atp = -1.0 }}\nvmax = 10.0\nkind = \"metabolic\"\n",
            REDUCED_LACTATE_NETWORK
        );
        let net = parse_network(&text2).unwrap();
        let diags = validate_network(&net);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
        assert!(diags[0].entity.contains("leak"));
    }

    #[test]
    fn feed_must_contain_substrates_only() {
        let text = REDUCED_LACTATE_NETWORK.replace("feed = { glc = 2220.0 }", "feed = { lac = 5.0 }");
        let err = parse_network(&text).unwrap_err();
        assert!(err.to_string().contains("substrate"), "{err}");
    }

    #[test]
    fn round_trip_preserves_network_and_ordering() {
        let net = parse_network(REDUCED_LACTATE_NETWORK).unwrap();
        let text = serialize_network(&net);
        let net2 = parse_network(&text).unwrap();
        assert!(networks_equal(&net, &net2), "round trip changed the network:\n{text}");
        // serialization is a fixed point after one round
        assert_eq!(text, serialize_network(&net2));
    }

    #[test]
    fn parse_is_deterministic() {
        let a = parse_network(REDUCED_LACTATE_NETWORK).unwrap();
        let b = parse_network(REDUCED_LACTATE_NETWORK).unwrap();
        assert!(networks_equal(&a, &b));
        assert_eq!(
            a.species.iter().map(|s| &s.id).collect::<Vec<_>>(),
            b.species.iter().map(|s| &s.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn matrix_assembly_matches_file_coefficients() {
        let net = parse_network(REDUCED_LACTATE_NETWORK).unwrap();
        let s_z = net.s_z();
        let glc_row = net.z_position(net.species_index("glc").unwrap()).unwrap();
        let v_glc = net.reaction_index("v_glc").unwrap();
        assert_eq!(s_z[glc_row][v_glc], -1.0);
        let s_m = net.s_m();
        let pyr_row = net.m_species.iter().position(|&s| net.species[s].id == "pyr").unwrap();
        assert_eq!(s_m[pyr_row][v_glc], 2.0);
        let s_p = net.s_p();
        let atpase_row = 0; // regulated first
        let syn = net.reaction_index("syn_atpase").unwrap();
        assert_eq!(s_p[atpase_row][syn], 1.0);
        // rows partition by compartment: no species appears in two groups
        let mut all = net.z_species.clone();
        all.extend(&net.m_species);
        all.extend(&net.p_species);
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), net.n_species());
    }
}
