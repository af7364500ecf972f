use proptest::prelude::*;
use vnode_sim::vnode::{parse_boot_layout, NodeSet, TrustClass};

const CLASSES: [TrustClass; 4] = [
    TrustClass::Trusted,
    TrustClass::Untrusted,
    TrustClass::ResponsiveAware,
    TrustClass::TelecomBuiltin,
];

fn layout_text() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(
            (
                1u64..=16,
                0usize..4,
                prop::option::of(0u64..4),
                prop::option::of(0u32..8),
            ),
            1..=4,
        ),
        prop::option::of(1u64..=50),
        1usize..=8,
    )
        .prop_map(|(nodes, pct, ncpus)| {
            let mut used = [false; 4];
            let mut total = 0;
            let mut parts = Vec::new();
            for (i, (blocks, class, reserved, cpu)) in nodes.into_iter().enumerate() {
                let mut class = class;
                while used[class] {
                    class = (class + 1) % 4;
                }
                used[class] = true;
                total += blocks * 4;
                let mut part = format!("n{i}:{}M:{}", blocks * 4, CLASSES[class]);
                if let Some(r) = reserved {
                    part.push_str(&format!(":reserved={}K", r * 256));
                }
                if let Some(c) = cpu {
                    part.push_str(&format!(":cpus={}", c as usize % ncpus));
                }
                parts.push(part);
            }
            let threshold = pct.map(|p| format!(" threshold={p}%")).unwrap_or_default();
            format!(
                "total={total}M ncpus={ncpus}{threshold} vnode={}",
                parts.join(",")
            )
        })
}

proptest! {
    #[test]
    fn format_then_parse_is_identity(text in layout_text()) {
        let layout = parse_boot_layout(&text).unwrap();
        let again = parse_boot_layout(&layout.to_string()).unwrap();
        prop_assert_eq!(again, layout);
    }

    #[test]
    fn node_ranges_tile_physical_memory(text in layout_text()) {
        let layout = parse_boot_layout(&text).unwrap();
        let nodes = NodeSet::generate(&layout).unwrap();
        let mut next = 0;
        for node in nodes.iter() {
            prop_assert_eq!(node.base_pfn, next);
            prop_assert_eq!(nodes.setup_memblock(node.base_pfn).unwrap(), node.id);
            prop_assert_eq!(nodes.setup_memblock(node.base_pfn + node.frame_count - 1).unwrap(), node.id);
            next += node.frame_count;
        }
        prop_assert_eq!(next, layout.total_frames());
        prop_assert!(nodes.setup_memblock(next).is_err());
    }
}
