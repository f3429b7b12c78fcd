use super::NestedMesh;

/// Enriched patch around a coarse node.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub id: usize,
    /// Coarse vertex carrying the enrichment.
    pub node: usize,
    /// Sorted macro elements sharing `node`.
    pub elements: Vec<usize>,
    /// Number of micro elements embedded in the patch.
    pub weight: usize,
    /// Sorted fine nodes of the patch, hanging nodes excluded.
    pub nodes: Vec<usize>,
}

impl Patch {
    /// Sorted ranks owning at least one element of the patch.
    pub fn owners(&self, element_owner: &[usize]) -> Vec<usize> {
        let mut r: Vec<usize> = self.elements.iter().map(|&e| element_owner[e]).collect();
        r.sort_unstable();
        r.dedup();
        r
    }

    pub fn is_distributed(&self, element_owner: &[usize]) -> bool {
        self.owners(element_owner).len() > 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    /// Macro elements split at least once.
    pub refined: Vec<bool>,
    /// Sorted enriched coarse vertices; position = patch id.
    pub enriched: Vec<usize>,
    pub enriched_index: Vec<Option<usize>>,
    /// Macro elements belonging to the solution patchwork.
    pub sp: Vec<bool>,
    pub patches: Vec<Patch>,
}

impl Classification {
    pub fn sp_elements(&self) -> Vec<usize> {
        (0..self.sp.len()).filter(|&e| self.sp[e]).collect()
    }

    pub fn nsp_elements(&self) -> Vec<usize> {
        (0..self.sp.len()).filter(|&e| !self.sp[e]).collect()
    }

    /// Patches covering macro element `e`, in patch id order.
    pub fn patches_of(&self, mesh: &NestedMesh, e: usize) -> Vec<usize> {
        let mut v: Vec<usize> = mesh.coarse().tets[e].iter().filter_map(|&n| self.enriched_index[n]).collect();
        v.sort_unstable();
        v
    }
}

/// Enriches every coarse node with a refined element in its support; the
/// solution patchwork is the union of the enriched patches.
pub fn classify(mesh: &NestedMesh) -> Classification {
    let coarse = mesh.coarse();
    let nm = mesh.macro_count();
    let refined: Vec<bool> = (0..nm).map(|e| mesh.is_macro_refined(e)).collect();
    let mut is_enriched = vec![false; coarse.vertices.len()];
    for e in (0..nm).filter(|&e| refined[e]) {
        for &v in &coarse.tets[e] {
            is_enriched[v] = true;
        }
    }
    let enriched: Vec<usize> = (0..is_enriched.len()).filter(|&v| is_enriched[v]).collect();
    let mut enriched_index = vec![None; coarse.vertices.len()];
    for (i, &v) in enriched.iter().enumerate() {
        enriched_index[v] = Some(i);
    }
    let sp: Vec<bool> = coarse.tets.iter().map(|t| t.iter().any(|&v| is_enriched[v])).collect();
    let support = coarse.vertex_elements();
    let patches = enriched
        .iter()
        .enumerate()
        .map(|(id, &node)| {
            let elements = support[node].clone();
            let weight = elements.iter().map(|&e| mesh.macro_micro(e).len()).sum();
            let mut nodes: Vec<usize> = elements.iter().flat_map(|&e| mesh.macro_nodes(e)).filter(|&n| !mesh.is_hanging(n)).collect();
            nodes.sort_unstable();
            nodes.dedup();
            Patch { id, node, elements, weight, nodes }
        })
        .collect();
    Classification { refined, enriched, enriched_index, sp, patches }
}
