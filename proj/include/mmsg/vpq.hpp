#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmsg {

// One panoptic frame: a segment-id map (0 = void) plus segment-id -> class.
// Segment ids are tube identities: the same id in consecutive frames is the
// same segment over time.
struct PanopticFrame {
    int height = 0;
    int width = 0;
    std::vector<int32_t> seg;  // row-major, height*width
    std::map<int32_t, int> seg_class;

    int32_t at(int y, int x) const { return seg[static_cast<size_t>(y) * width + x]; }
};

struct PanopticVideo {
    std::vector<PanopticFrame> frames;
};

namespace detail {

struct TubeStats {
    long long area = 0;
    int cls = -1;
};

// Pixel histograms over one window [begin, end): per-tube areas and
// gt-tube x pred-tube intersections.
struct WindowTubes {
    std::map<int32_t, TubeStats> gt, pred;
    std::map<std::pair<int32_t, int32_t>, long long> inter;
};

inline WindowTubes collect_window(const PanopticVideo& gt, const PanopticVideo& pred,
                                  size_t begin, size_t end) {
    WindowTubes w;
    for (size_t f = begin; f < end; ++f) {
        const PanopticFrame& gf = gt.frames[f];
        const PanopticFrame& pf = pred.frames[f];
        size_t n = gf.seg.size();
        for (size_t i = 0; i < n; ++i) {
            int32_t gid = gf.seg[i];
            int32_t pid = pf.seg[i];
            if (gid != 0) {
                TubeStats& ts = w.gt[gid];
                ts.area += 1;
                ts.cls = gf.seg_class.at(gid);
            }
            if (pid != 0) {
                TubeStats& ts = w.pred[pid];
                ts.area += 1;
                ts.cls = pf.seg_class.at(pid);
            }
            if (gid != 0 && pid != 0) w.inter[{gid, pid}] += 1;
        }
    }
    return w;
}

}  // namespace detail

// Video Panoptic Quality at window size k: tubes are stitched over k+1
// consecutive frames, gt/pred tubes of equal class match at tube-IoU > 0.5,
// per-class PQ = sum IoU / (TP + FP/2 + FN/2), averaged over the classes
// present in the window, then over all window positions. k = 0 reduces to
// per-frame panoptic quality averaged over frames. Windows with no segments
// at all are skipped; a video with no content in any window scores 1.0.
inline double vpq(const PanopticVideo& gt, const PanopticVideo& pred, int k) {
    if (gt.frames.size() != pred.frames.size())
        throw std::invalid_argument("vpq: frame count mismatch");
    if (gt.frames.empty()) throw std::invalid_argument("vpq: empty video");
    if (k < 0) throw std::invalid_argument("vpq: negative window size");
    for (size_t f = 0; f < gt.frames.size(); ++f) {
        if (gt.frames[f].height != pred.frames[f].height ||
            gt.frames[f].width != pred.frames[f].width)
            throw std::invalid_argument("vpq: frame shape mismatch");
    }

    size_t n = gt.frames.size();
    size_t span = static_cast<size_t>(k) + 1;
    if (span > n) span = n;  // clamp: single window over the whole video
    size_t n_windows = n - span + 1;

    double window_sum = 0.0;
    size_t windows_counted = 0;

    for (size_t w0 = 0; w0 < n_windows; ++w0) {
        auto w = detail::collect_window(gt, pred, w0, w0 + span);

        // best (and by the >0.5 rule, only) match per gt tube
        std::set<int> classes;
        for (const auto& [id, ts] : w.gt) classes.insert(ts.cls);
        for (const auto& [id, ts] : w.pred) classes.insert(ts.cls);
        if (classes.empty()) continue;

        std::map<int32_t, int32_t> gt_match;  // gt id -> pred id
        std::set<int32_t> pred_matched;
        std::map<int, double> iou_sum;
        std::map<int, long long> tp_count;
        for (const auto& [key, ov] : w.inter) {
            auto [gid, pid] = key;
            const auto& gts = w.gt.at(gid);
            const auto& pts = w.pred.at(pid);
            if (gts.cls != pts.cls) continue;
            double uni = double(gts.area + pts.area - ov);
            double iou = double(ov) / uni;
            if (iou > 0.5) {
                gt_match[gid] = pid;
                pred_matched.insert(pid);
                iou_sum[gts.cls] += iou;
                tp_count[gts.cls] += 1;
            }
        }

        double class_sum = 0.0;
        for (int cls : classes) {
            long long tp = tp_count.count(cls) ? tp_count[cls] : 0;
            long long fn = 0, fp = 0;
            for (const auto& [id, ts] : w.gt)
                if (ts.cls == cls && !gt_match.count(id)) ++fn;
            for (const auto& [id, ts] : w.pred)
                if (ts.cls == cls && !pred_matched.count(id)) ++fp;
            double denom = double(tp) + 0.5 * double(fp) + 0.5 * double(fn);
            double pq = denom > 0 ? (iou_sum.count(cls) ? iou_sum[cls] : 0.0) / denom : 0.0;
            class_sum += pq;
        }
        window_sum += class_sum / double(classes.size());
        ++windows_counted;
    }
    if (windows_counted == 0) return 1.0;  // nothing but void anywhere
    return window_sum / double(windows_counted);
}

}  // namespace mmsg
