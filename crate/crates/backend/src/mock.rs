//! Deterministic stand-ins for the six neural backends.
//!
//! Every function here is a pure function of its arguments: no clocks, no
//! global state, no randomness beyond the seed carried in the request.

use std::f64::consts::PI;

use anonpipe_core::exec::mix_seed;
use anonpipe_core::geometry::{
    project_points, rotation_from_euler, CameraModel, FACE_MODEL_3D, LANDMARK_COUNT, PNP_LANDMARKS,
};
use anonpipe_core::{AttributeConfidence, AttributeSet, Embedding, FaceBox, Gender};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use uuid::Uuid;

use crate::protocol::*;

pub const MOCK_EMBED_DIM: usize = 64;

/// Skin tone painted by [`draw_face`]; [`mock_detect`] keys on this range.
pub const SKIN: [u8; 3] = [224, 172, 128];

const MIN_COMPONENT_PIXELS: usize = 16;
/// Fraction of a face box trimmed from each side before embedding.
const FACE_INSET: f64 = 0.15;
const EMBED_KEY: u64 = 0x616e_6f6e_7069_7065;

fn is_skin(p: &Rgb<u8>) -> bool {
    let [r, g, b] = p.0;
    r >= 180 && (120..=200).contains(&g) && (80..=160).contains(&b) && r > g && g > b
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn inner_cell(f: f64) -> u64 {
    (((f - FACE_INSET) / (1.0 - 2.0 * FACE_INSET) * 4.0) as u64).min(3)
}

fn crop(img: &RgbImage, face: Option<&FaceBox>) -> RgbImage {
    match face.and_then(|f| f.pixel_rect(img.width(), img.height())) {
        Some((x, y, w, h)) => image::imageops::crop_imm(img, x, y, w, h).to_image(),
        None => img.clone(),
    }
}

/// Paints a synthetic face: a skin-coloured box whose interior carries a
/// 4×4 pattern of dark features. The pattern is row `1 + identity % 15` of a
/// 16×16 Hadamard matrix, so distinct identities (mod 15) have orthogonal
/// interiors and embed at distance about 1. Returns the box that
/// [`mock_detect`] will report for it.
pub fn draw_face(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, identity: u8) -> FaceBox {
    let x1 = (x + w).min(img.width());
    let y1 = (y + h).min(img.height());
    let key = mix_seed(0x6661_6365, u64::from(identity));
    let row = 1 + u64::from(identity) % 15;
    let feature = Rgb([40 + (key >> 8) as u8 % 60, 30 + (key >> 16) as u8 % 40, 20 + (key >> 24) as u8 % 40]);
    for py in y..y1 {
        for px in x..x1 {
            // The rim stays skin so the detected box is the drawn one.
            let fx = (f64::from(px - x) + 0.5) / f64::from(w);
            let fy = (f64::from(py - y) + 0.5) / f64::from(h);
            let inner = (FACE_INSET..1.0 - FACE_INSET).contains(&fx) && (FACE_INSET..1.0 - FACE_INSET).contains(&fy);
            let cell = if inner { Some(inner_cell(fy) * 4 + inner_cell(fx)) } else { None };
            let dark = cell.is_some_and(|c| (row & c).count_ones() % 2 == 1);
            img.put_pixel(px, py, if dark { feature } else { Rgb(SKIN) });
        }
    }
    FaceBox { x: f64::from(x), y: f64::from(y), width: f64::from(x1 - x), height: f64::from(y1 - y), score: 1.0 }
}

/// Bounding boxes of skin-coloured connected components, largest first.
pub fn mock_detect(img: &RgbImage) -> Vec<FaceBox> {
    let (w, h) = img.dimensions();
    let mut seen = vec![false; (w * h) as usize];
    let mut faces = Vec::new();
    let mut stack = Vec::new();
    for start in 0..(w * h) {
        if seen[start as usize] || !is_skin(img.get_pixel(start % w, start / w)) {
            continue;
        }
        seen[start as usize] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1, mut n) = (w, h, 0, 0, 0usize);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
            n += 1;
            let neighbours = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in neighbours.into_iter().flatten() {
                if !seen[j as usize] && is_skin(img.get_pixel(j % w, j / w)) {
                    seen[j as usize] = true;
                    stack.push(j);
                }
            }
        }
        if n >= MIN_COMPONENT_PIXELS {
            let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
            faces.push(FaceBox {
                x: f64::from(x0),
                y: f64::from(y0),
                width: f64::from(bw),
                height: f64::from(bh),
                score: 1.0,
            });
        }
    }
    faces.sort_by(|a, b| b.area().total_cmp(&a.area()).then(a.y.total_cmp(&b.y)).then(a.x.total_cmp(&b.x)));
    faces
}

/// Head pose the mock landmarker assigns to a box: turned towards the image
/// centre, frontal when the box is centred.
pub fn mock_pose_for_box(face: &FaceBox, width: u32, height: u32) -> (f64, f64) {
    let (hw, hh) = (f64::from(width) / 2.0, f64::from(height) / 2.0);
    let ox = (face.x + face.width / 2.0 - hw) / hw;
    let oy = (face.y + face.height / 2.0 - hh) / hh;
    (30.0 * oy.clamp(-1.0, 1.0), 40.0 * ox.clamp(-1.0, 1.0))
}

fn landmark_template() -> Vec<[f64; 3]> {
    (0..LANDMARK_COUNT)
        .map(|i| match PNP_LANDMARKS.iter().position(|&k| k == i) {
            Some(k) => FACE_MODEL_3D[k],
            None => {
                let t = 2.0 * PI * i as f64 / LANDMARK_COUNT as f64;
                [200.0 * t.cos(), 40.0 + 250.0 * t.sin(), -100.0]
            }
        })
        .collect()
}

/// 68 points of a generic head posed per [`mock_pose_for_box`] and scaled to
/// the box.
pub fn mock_landmarks(img: &RgbImage, face: &FaceBox) -> Vec<[f64; 2]> {
    let (w, h) = img.dimensions();
    let cam = CameraModel::for_image(w, h);
    let (pitch, yaw) = mock_pose_for_box(face, w, h);
    // The template spans about 450 model units across.
    let z = cam.focal * 450.0 / face.width.max(1.0);
    let (u, v) = (face.x + face.width / 2.0, face.y + face.height / 2.0);
    let t = Vector3::new((u - cam.cx) * z / cam.focal, -(v - cam.cy) * z / cam.focal, z);
    project_points(&landmark_template(), &rotation_from_euler(pitch, yaw, 0.0), &t, &cam)
}

/// Mean grey level of each cell of an 8×8 grid over the image.
fn grey_grid(img: &RgbImage) -> [f64; 64] {
    let (w, h) = img.dimensions();
    let mut sum = [0.0f64; 64];
    let mut count = [0u32; 64];
    for (x, y, p) in img.enumerate_pixels() {
        let cell = ((y * 8 / h) * 8 + x * 8 / w) as usize;
        let [r, g, b] = p.0;
        sum[cell] += (299.0 * f64::from(r) + 587.0 * f64::from(g) + 114.0 * f64::from(b)) / 1000.0;
        count[cell] += 1;
    }
    let mut out = [0.0; 64];
    for i in 0..64 {
        // Images narrower than 8 px leave empty cells; they read as mid-grey.
        out[i] = if count[i] > 0 { sum[i] / f64::from(count[i]) } else { 127.5 };
    }
    out
}

/// Centred 8×8 grey thumbnail under a fixed sign key, as a unit vector.
/// With a face box, only the interior of the box is used.
pub fn mock_embed(img: &RgbImage, face: Option<&FaceBox>) -> Embedding {
    let inner = face.map(|f| FaceBox {
        x: f.x + FACE_INSET * f.width,
        y: f.y + FACE_INSET * f.height,
        width: (1.0 - 2.0 * FACE_INSET) * f.width,
        height: (1.0 - 2.0 * FACE_INSET) * f.height,
        score: f.score,
    });
    let c = crop(img, inner.as_ref());
    let grid = grey_grid(&c);
    let mean = grid.iter().sum::<f64>() / 64.0;
    let v: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, g)| if mix_seed(EMBED_KEY, i as u64) & 1 == 1 { mean - g } else { g - mean })
        .collect();
    if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
        return Embedding::new(v).expect("non-zero finite vector");
    }
    // Uniform crops have no structure; key on their colour instead.
    let h = fnv1a(c.as_raw().iter().take(3).copied());
    let v = (0..MOCK_EMBED_DIM as u64).map(|i| unit(mix_seed(h, i)) - 0.5).collect();
    Embedding::new(v).expect("hash vector is non-zero")
}

const RACES: [&str; 6] = ["Asian", "Black", "White", "Indian", "Middle Eastern", "Latino"];
const EMOTIONS: [&str; 5] = ["neutral", "happy", "sad", "surprise", "angry"];

pub fn mock_attributes(img: &RgbImage, face: &FaceBox) -> AttributeSet {
    let h = fnv1a(crop(img, Some(face)).into_raw());
    AttributeSet {
        age: f64::from(8 + (mix_seed(h, 1) % 70) as u32),
        gender: if mix_seed(h, 2) & 1 == 0 { Gender::Female } else { Gender::Male },
        race: RACES[(mix_seed(h, 3) % RACES.len() as u64) as usize].to_string(),
        emotion: Some(EMOTIONS[(mix_seed(h, 4) % EMOTIONS.len() as u64) as usize].to_string()),
        confidence: AttributeConfidence { age: 0.9, gender: 0.9, race: 0.9, emotion: 0.9 },
    }
}

/// Fills the mask box with an 8×8 grid of skin shades keyed by seed and
/// prompt. Pixels outside the box are copied unchanged.
pub fn mock_inpaint(req: &InpaintRequest) -> Result<RgbImage, String> {
    let mut img = req.image.decode().map_err(|e| e.to_string())?;
    let mask = req.mask.ok_or("inpaint requires a mask")?;
    let (x0, y0, w, h) = mask.pixel_rect(img.width(), img.height()).ok_or("mask lies outside the image")?;
    let key = mix_seed(req.seed, fnv1a(req.prompt.bytes()));
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let cell = u64::from(((y - y0) * 8 / h) * 8 + (x - x0) * 8 / w);
            let v = 90.0 + 165.0 * unit(mix_seed(key, cell));
            img.put_pixel(x, y, Rgb([v as u8, (v * 0.78) as u8, (v * 0.62) as u8]));
        }
    }
    Ok(img)
}

/// Warp parameters for driving frame `k`: rotation (rad) and shift (px).
fn warp_for(k: usize) -> (f64, f64, f64) {
    if k == 0 {
        return (0.0, 0.0, 0.0);
    }
    let k = k as f64;
    (0.03 * (0.7 * k).sin(), 1.5 * (0.3 * k).sin(), 1.0 * (0.5 * k).sin())
}

fn warp(src: &RgbImage, (theta, dx, dy): (f64, f64, f64)) -> RgbImage {
    let (w, h) = src.dimensions();
    let (cx, cy) = (f64::from(w) / 2.0, f64::from(h) / 2.0);
    let (s, c) = theta.sin_cos();
    RgbImage::from_fn(w, h, |x, y| {
        let (u, v) = (f64::from(x) + 0.5 - cx - dx, f64::from(y) + 0.5 - cy - dy);
        let sx = (c * u + s * v + cx).floor().clamp(0.0, f64::from(w - 1)) as u32;
        let sy = (-s * u + c * v + cy).floor().clamp(0.0, f64::from(h - 1)) as u32;
        *src.get_pixel(sx, sy)
    })
}

/// One output per driving frame: the source, then small index-keyed warps of it.
pub fn mock_animate(source: &RgbImage, driving_len: usize) -> Result<(Vec<RgbImage>, MotionCode), String> {
    if driving_len == 0 {
        return Err("animate requires at least one driving frame".into());
    }
    let params: Vec<_> = (0..driving_len).map(warp_for).collect();
    let frames = params.iter().map(|&p| if p == (0.0, 0.0, 0.0) { source.clone() } else { warp(source, p) }).collect();
    let blob: Vec<u8> = params.iter().flat_map(|&(a, b, c)| [a, b, c]).flat_map(|v| (v as f32).to_le_bytes()).collect();
    Ok((frames, MotionCode(STANDARD.encode(blob))))
}

/// Serves one request with the mock backends.
pub fn handle(req: &BackendRequest) -> BackendResponse {
    match dispatch(&req.body) {
        Ok(result) => BackendResponse::ok(req.request_id, result),
        Err(message) => BackendResponse::error(req.request_id, message),
    }
}

fn dispatch(body: &RequestBody) -> Result<OpResult, String> {
    let decode = |d: &ImageData| d.decode().map_err(|e| e.to_string());
    Ok(match body {
        RequestBody::Detect(r) => OpResult::Detect(DetectResult { faces: mock_detect(&decode(&r.image)?) }),
        RequestBody::Landmarks(r) => {
            OpResult::Landmarks(LandmarksResult { points: mock_landmarks(&decode(&r.image)?, &r.face) })
        }
        RequestBody::Embed(r) => {
            let e = mock_embed(&decode(&r.image)?, r.face.as_ref());
            OpResult::Embed(EmbedResult { embedding: e.values().to_vec() })
        }
        RequestBody::Attributes(r) => {
            OpResult::Attributes(AttributesResult { attributes: mock_attributes(&decode(&r.image)?, &r.face) })
        }
        RequestBody::Inpaint(r) => {
            let img = mock_inpaint(r)?;
            OpResult::Inpaint(InpaintResult { image: ImageData::encode(&img), steps_used: r.steps, seed_used: r.seed })
        }
        RequestBody::Animate(r) => {
            let (frames, motion) = mock_animate(&decode(&r.source)?, r.driving.len())?;
            OpResult::Animate(AnimateResult { frames: frames.iter().map(ImageData::encode).collect(), motion })
        }
    })
}

pub fn mock_health() -> Health {
    Health {
        status: "ok".into(),
        protocol: PROTOCOL_VERSION.into(),
        ops: Op::ALL.into_iter().map(|op| (op, format!("mock-{op}"))).collect(),
    }
}

/// Fixed request id for golden files and examples.
pub fn golden_request_id(op: Op) -> Uuid {
    Uuid::from_u128(0x0000_0000_0000_4000_8000_0000_0000_0000 | (Op::ALL.iter().position(|&o| o == op).unwrap() as u128 + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use anonpipe_core::cosine_distance;
    use anonpipe_core::geometry::{pose_from_landmarks, LandmarkSet};

    fn scene_with_face(identity: u8) -> (RgbImage, FaceBox) {
        let mut img = RgbImage::from_pixel(96, 72, Rgb([30, 60, 90]));
        let b = draw_face(&mut img, 30, 20, 36, 40, identity);
        (img, b)
    }

    #[test]
    fn detect_finds_drawn_face_only() {
        let (img, b) = scene_with_face(0);
        assert_eq!(mock_detect(&img), vec![b]);
        assert!(mock_detect(&RgbImage::new(40, 30)).is_empty());
    }

    #[test]
    fn detect_orders_by_area() {
        let mut img = RgbImage::new(120, 60);
        let small = draw_face(&mut img, 2, 2, 10, 10, 0);
        let big = draw_face(&mut img, 50, 5, 40, 40, 1);
        assert_eq!(mock_detect(&img), vec![big, small]);
    }

    #[test]
    fn centred_face_is_frontal() {
        let img = RgbImage::new(200, 100);
        let centred = FaceBox { x: 80.0, y: 30.0, width: 40.0, height: 40.0, score: 1.0 };
        let lm = LandmarkSet::new(mock_landmarks(&img, &centred)).unwrap();
        let pose = pose_from_landmarks(&lm, &CameraModel::for_image(200, 100)).unwrap();
        assert!(pose.pitch.abs() < 1e-6 && pose.yaw.abs() < 1e-6, "{pose:?}");

        let right = FaceBox { x: 140.0, ..centred };
        let lm = LandmarkSet::new(mock_landmarks(&img, &right)).unwrap();
        let pose = pose_from_landmarks(&lm, &CameraModel::for_image(200, 100)).unwrap();
        let (_, yaw) = mock_pose_for_box(&right, 200, 100);
        assert!((pose.yaw - yaw).abs() < 1e-4, "{pose:?} vs {yaw}");
    }

    #[test]
    fn embed_is_deterministic_unit_and_inversion_is_antipodal() {
        let (img, b) = scene_with_face(2);
        let a = mock_embed(&img, Some(&b));
        assert_eq!(a, mock_embed(&img, Some(&b)));
        assert_eq!(a.dim(), MOCK_EMBED_DIM);
        let norm: f64 = a.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        let mut inv = img.clone();
        inv.pixels_mut().for_each(|p| p.0 = p.0.map(|c| 255 - c));
        let d = cosine_distance(&a, &mock_embed(&inv, Some(&b))).unwrap();
        assert!((d - 2.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn same_identity_embeds_close_different_apart() {
        let (a, ba) = scene_with_face(1);
        let mut b = RgbImage::from_pixel(96, 72, Rgb([90, 30, 30]));
        let bb = draw_face(&mut b, 10, 8, 36, 40, 1);
        let same = cosine_distance(&mock_embed(&a, Some(&ba)), &mock_embed(&b, Some(&bb))).unwrap();
        assert!(same < 1e-9, "{same}");
        let embs: Vec<_> = (0..15).map(|i| {
            let (img, b) = scene_with_face(i);
            mock_embed(&img, Some(&b))
        }).collect();
        for i in 0..15 {
            for j in 0..i {
                let d = cosine_distance(&embs[i], &embs[j]).unwrap();
                assert!(d > 0.7, "{i} vs {j}: {d}");
            }
        }
    }

    #[test]
    fn uniform_images_still_embed() {
        let e = mock_embed(&RgbImage::from_pixel(5, 5, Rgb([7, 7, 7])), None);
        assert_eq!(e.dim(), MOCK_EMBED_DIM);
        let f = mock_embed(&RgbImage::from_pixel(5, 5, Rgb([8, 7, 7])), None);
        assert_ne!(e, f);
    }

    fn inpaint_req(seed: u64, mask: Option<FaceBox>) -> InpaintRequest {
        let (img, _) = scene_with_face(0);
        InpaintRequest {
            image: ImageData::encode(&img),
            mask,
            prompt: "p".into(),
            negative_prompt: "n".into(),
            steps: 35,
            guidance: 12.0,
            control_strengths: Default::default(),
            seed,
            scheduler: "dpmsolver++".into(),
        }
    }

    #[test]
    fn inpaint_is_confined_seeded_and_deterministic() {
        let (orig, b) = scene_with_face(0);
        let a = mock_inpaint(&inpaint_req(42, Some(b))).unwrap();
        assert_eq!(a, mock_inpaint(&inpaint_req(42, Some(b))).unwrap());
        let c = mock_inpaint(&inpaint_req(43, Some(b))).unwrap();
        let (x0, y0, w, h) = b.pixel_rect(96, 72).unwrap();
        let mut inside_diff = 0;
        for (x, y, p) in a.enumerate_pixels() {
            let inside = (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y);
            if inside {
                inside_diff += usize::from(p != c.get_pixel(x, y));
            } else {
                assert_eq!(p, orig.get_pixel(x, y));
            }
        }
        assert!(inside_diff > 0);
        assert!(mock_inpaint(&inpaint_req(42, None)).is_err());
    }

    #[test]
    fn animate_contract() {
        let (src, _) = scene_with_face(3);
        assert!(mock_animate(&src, 0).is_err());
        let (one, _) = mock_animate(&src, 1).unwrap();
        assert_eq!(one, vec![src.clone()]);
        let (many, m1) = mock_animate(&src, 9).unwrap();
        assert_eq!(many.len(), 9);
        assert_eq!(many[0], src);
        assert_ne!(many[3], src);
        let (again, m2) = mock_animate(&src, 9).unwrap();
        assert_eq!((many, m1), (again, m2));
    }

    #[test]
    fn handle_reports_errors_in_band() {
        let (img, _) = scene_with_face(0);
        let req = BackendRequest::new(RequestBody::Animate(AnimateRequest { source: ImageData::encode(&img), driving: vec![] }));
        let resp = handle(&req);
        assert_eq!(resp.status, Status::Error);
        assert_eq!(resp.request_id, req.request_id);
        resp.check_shape().unwrap();
    }
}
