"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops and ``math`` so that a
bug in the package's vectorised code cannot hide in a shared helper.  The
only allowed import from the package is nothing at all.
"""

from __future__ import annotations

import math

# ---------------------------------------------------------------------------
# small dense kernels on lists of lists


def loop_matmul(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    assert len(b) == k
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def loop_softmax_row(row):
    top = max(row)
    exps = [math.exp(v - top) for v in row]
    total = sum(exps)
    return [e / total for e in exps]


def loop_layer_norm(rows, eps):
    out = []
    for row in rows:
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        std = math.sqrt(var + eps)
        out.append([(v - mu) / std for v in row])
    return out


def loop_gelu(x):
    u = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)
    return 0.5 * x * (1.0 + math.tanh(u))


def loop_add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


# ---------------------------------------------------------------------------
# attention, step by step


def loop_attention(q_rows, kv_rows, w_q, w_k, w_v, w_o):
    """Multi-head attention without the residual; weights are per-head lists."""
    heads = len(w_q)
    d_head = len(w_q[0][0])
    scale = 1.0 / math.sqrt(d_head)
    concat = [[] for _ in q_rows]
    for h in range(heads):
        q = loop_matmul(q_rows, w_q[h])
        k = loop_matmul(kv_rows, w_k[h])
        v = loop_matmul(kv_rows, w_v[h])
        scores = [[scale * sum(qi[t] * kj[t] for t in range(d_head)) for kj in k] for qi in q]
        probs = [loop_softmax_row(row) for row in scores]
        out = loop_matmul(probs, v)
        for i, row in enumerate(out):
            concat[i].extend(row)
    return loop_matmul(concat, w_o)


def loop_mlp(rows, w1, b1, w2, b2):
    """Residual two-layer MLP with the tanh-form GELU in the middle."""
    pre = [[v + bias for v, bias in zip(row, b1)] for row in loop_matmul(rows, w1)]
    act = [[loop_gelu(v) for v in row] for row in pre]
    out = [[v + bias for v, bias in zip(row, b2)] for row in loop_matmul(act, w2)]
    return loop_add(rows, out)


def loop_dual(image_rows, video_rows, w_image, w_video, mlp_image, mlp_video,
              pre_norm, eps):
    """Both dual-attention branches; rows already carry class token + positions."""
    n_i = loop_layer_norm(image_rows, eps) if pre_norm else image_rows
    n_v = loop_layer_norm(video_rows, eps) if pre_norm else video_rows
    att_i = loop_attention(n_i, n_v, *w_image)
    att_v = loop_attention(n_v, n_i, *w_video)
    h_i = loop_add(image_rows, att_i)
    h_v = loop_add(video_rows, att_v)
    y_i = loop_mlp(h_i, *mlp_image)
    y_v = loop_mlp(h_v, *mlp_video)
    return y_i, y_v


def loop_bilinear(grid, out_h, out_w):
    """Half-pixel-centre bilinear resize of an (h, w, c) nested list."""
    h, w, c = len(grid), len(grid[0]), len(grid[0][0])
    out = [[[0.0] * c for _ in range(out_w)] for _ in range(out_h)]
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                top = grid[y0][x0][ch] * (1 - fx) + grid[y0][x1][ch] * fx
                bot = grid[y1][x0][ch] * (1 - fx) + grid[y1][x1][ch] * fx
                out[i][j][ch] = top * (1 - fy) + bot * fy
    return out


def loop_conv3x3(grid, kernel):
    """Depthwise 3x3 cross-correlation with zero padding, nested lists."""
    h, w, c = len(grid), len(grid[0]), len(grid[0][0])
    out = [[[0.0] * c for _ in range(w)] for _ in range(h)]
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                acc = 0.0
                for u in range(3):
                    for v in range(3):
                        y, x = i + u - 1, j + v - 1
                        if 0 <= y < h and 0 <= x < w:
                            acc += kernel[u][v] * grid[y][x][ch]
                out[i][j][ch] = acc
    return out


# ---------------------------------------------------------------------------
# affordance voting


def vote_prior(entries, labels_by_zone, vocabulary, weighted):
    """Exponential label prior from (zone_id, similarity) votes.

    Sums the exponents per label in entry order, which is also what the
    implementation must do, so agreement can be checked to 1e-12.
    """
    probs = []
    for label in vocabulary:
        exponent = 0.0
        for zone_id, similarity in entries:
            if label in labels_by_zone[zone_id]:
                exponent += similarity if weighted else 1.0
        probs.append(math.exp(exponent))
    total = sum(probs)
    return [p / total for p in probs]


# ---------------------------------------------------------------------------
# detection evaluation


def loop_iou(a, b):
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    if area_a <= 0 or area_b <= 0:
        return 0.0
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def _loop_ap(rows, npos):
    """All-point AP from (score, original_index, is_tp) rows."""
    if not rows:
        return 0.0
    rows = sorted(rows, key=lambda r: (-r[0], r[1]))
    recalls, precisions = [], []
    tp = fp = 0
    for _, _, flag in rows:
        if flag:
            tp += 1
        else:
            fp += 1
        recalls.append(tp / npos)
        precisions.append(tp / (tp + fp))
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    prev = 0.0
    for r, p in zip(recalls, precisions):
        if r > prev:
            ap += (r - prev) * p
            prev = r
    return ap


def loop_evaluate(dets, gts, criteria, top_k):
    """Reference top-k mAP evaluator built from explicit dictionaries.

    dets: (uid, box, noun, verb, ttc, score) tuples in submission order.
    gts: (uid, box, noun, verb, ttc) tuples.
    criteria: (name, iou_threshold, require_verb, require_ttc, ttc_tol).
    Returns {criterion_name: {class: ap}} and {criterion_name: map}.
    """
    dets_by_uid = {}
    for idx, det in enumerate(dets):
        dets_by_uid.setdefault(det[0], []).append((det, idx))
    gts_by_uid = {}
    for gt in gts:
        gts_by_uid.setdefault(gt[0], []).append(gt)

    kept_by_uid = {}
    for uid, pairs in dets_by_uid.items():
        ranked = sorted(pairs, key=lambda pair: -pair[0][5])
        kept_by_uid[uid] = ranked[:top_k]

    npos = {}
    for gt in gts:
        npos[gt[2]] = npos.get(gt[2], 0) + 1
    classes = sorted(npos, key=str)

    # gt index assigned to each kept detection, keyed by iou threshold;
    # matching looks at boxes and nouns only
    assigned = {}
    for thr in {c[1] for c in criteria}:
        for uid, kept in kept_by_uid.items():
            by_class = {}
            for det, idx in kept:
                by_class.setdefault(det[2], []).append((det, idx))
            for cls, group in by_class.items():
                gts_cls = [g for g in gts_by_uid.get(uid, []) if g[2] == cls]
                taken = set()
                for det, idx in group:
                    best_j, best_iou = None, 0.0
                    for j, gt in enumerate(gts_cls):
                        if j in taken:
                            continue
                        overlap = loop_iou(det[1], gt[1])
                        if overlap >= thr and (best_j is None or overlap > best_iou):
                            best_j, best_iou = j, overlap
                    if best_j is not None:
                        taken.add(best_j)
                    assigned[(thr, idx)] = gts_cls[best_j] if best_j is not None else None

    per_class = {}
    maps = {}
    for name, thr, need_verb, need_ttc, ttc_tol in criteria:
        table = {}
        for cls in classes:
            rows = []
            for uid, kept in kept_by_uid.items():
                for det, idx in kept:
                    if det[2] != cls:
                        continue
                    gt = assigned[(thr, idx)]
                    ok = gt is not None
                    if ok and need_verb and det[3] != gt[3]:
                        ok = False
                    if ok and need_ttc and abs(det[4] - gt[4]) > ttc_tol:
                        ok = False
                    rows.append((det[5], idx, ok))
            table[cls] = _loop_ap(rows, npos[cls])
        per_class[name] = table
        total = 0.0
        for cls in classes:
            total += table[cls]
        maps[name] = total / len(classes)
    return per_class, maps


# ---------------------------------------------------------------------------
# hotspot rasterisation


def loop_gaussian_map(h, w, centers):
    """Direct per-cell evaluation of a sum of Gaussians, then normalise."""
    grid = [[0.0] * w for _ in range(h)]
    for row in range(h):
        for col in range(w):
            cy, cx = row + 0.5, col + 0.5
            for gx, gy, sigma in centers:
                d2 = (cx - gx) ** 2 + (cy - gy) ** 2
                grid[row][col] += math.exp(-d2 / (2.0 * sigma * sigma))
    total = sum(v for row in grid for v in row)
    return [[v / total for v in row] for row in grid]
