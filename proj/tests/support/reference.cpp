#include "reference.hpp"

#include "opsense/rng.hpp"

namespace opsense::testing {

Tensor conv2d_direct(const Tensor& x, const Tensor& w) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const long pad = static_cast<long>(k / 2);
  Tensor out({n, o, h, wd});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < wd; ++j) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t di = 0; di < k; ++di)
              for (std::size_t dj = 0; dj < k; ++dj) {
                const long y = static_cast<long>(i + di) - pad;
                const long xx = static_cast<long>(j + dj) - pad;
                if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                acc += x[((b * c + ic) * h + y) * wd + xx] * w[((oc * c + ic) * k + di) * k + dj];
              }
          out[((b * o + oc) * h + i) * wd + j] = acc;
        }
  return out;
}

Tensor avg_pool3x3_direct(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  Tensor out(x.shape());
  for (std::size_t b = 0; b < n * c; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < wd; ++j) {
        double acc = 0.0;
        int count = 0;
        for (long di = -1; di <= 1; ++di)
          for (long dj = -1; dj <= 1; ++dj) {
            const long y = static_cast<long>(i) + di, xx = static_cast<long>(j) + dj;
            if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
            acc += x[(b * h + y) * wd + xx];
            ++count;
          }
        out[(b * h + i) * wd + j] = acc / count;
      }
  return out;
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale) {
  Tensor t(std::move(shape));
  Rng rng(seed, 99);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

}  // namespace opsense::testing
