#include "invertfill/kernels.hpp"

namespace invertfill::kernels::reference {

namespace {

long x_index(const ConvGeometry& g, int b, int c, int y, int x) {
  return ((long(b) * g.in_channels + c) * g.height + y) * g.width + x;
}
long y_index(const ConvGeometry& g, int b, int o, int y, int x) {
  return ((long(b) * g.out_channels + o) * g.out_height() + y) * g.out_width() + x;
}
long w_index(const ConvGeometry& g, int o, int c, int ky, int kx) {
  return ((long(o) * g.in_channels + c) * g.kernel + ky) * g.kernel + kx;
}

// Visits every (output, input, weight) index triple touched by the convolution.
template <typename F>
void for_each_tap(const ConvGeometry& g, F&& f) {
  for (int b = 0; b < g.batch; ++b)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oy = 0; oy < g.out_height(); ++oy)
        for (int ox = 0; ox < g.out_width(); ++ox)
          for (int c = 0; c < g.in_channels; ++c)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                f(y_index(g, b, o, oy, ox), x_index(g, b, c, iy, ix), w_index(g, o, c, ky, kx));
              }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
  for (auto& v : y) v = 0.0;
  for_each_tap(g, [&](long yi, long xi, long wi) { y[yi] += w[wi] * x[xi]; });
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_y, std::span<const double> w,
                           std::span<double> grad_x) {
  for_each_tap(g, [&](long yi, long xi, long wi) { grad_x[xi] += w[wi] * grad_y[yi]; });
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x, std::span<const double> grad_y,
                            std::span<double> grad_w) {
  for_each_tap(g, [&](long yi, long xi, long wi) { grad_w[wi] += x[xi] * grad_y[yi]; });
}

void linear_forward(int batch, int in, int out, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
  for (int b = 0; b < batch; ++b)
    for (int o = 0; o < out; ++o) {
      double s = 0.0;
      for (int i = 0; i < in; ++i) s += w[long(o) * in + i] * x[long(b) * in + i];
      y[long(b) * out + o] = s;
    }
}

void gram_forward(int batch, int channels, int pixels, std::span<const double> x, std::span<double> gram) {
  const double norm = 1.0 / (double(channels) * pixels);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < channels; ++i)
      for (int j = 0; j < channels; ++j) {
        double s = 0.0;
        for (int p = 0; p < pixels; ++p)
          s += x[(long(b) * channels + i) * pixels + p] * x[(long(b) * channels + j) * pixels + p];
        gram[(long(b) * channels + i) * channels + j] = s * norm;
      }
}

void gram_backward(int batch, int channels, int pixels, std::span<const double> x,
                   std::span<const double> grad_gram, std::span<double> grad_x) {
  const double norm = 1.0 / (double(channels) * pixels);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < channels; ++i)
      for (int j = 0; j < channels; ++j) {
        const double gij = grad_gram[(long(b) * channels + i) * channels + j] * norm;
        for (int p = 0; p < pixels; ++p) {
          grad_x[(long(b) * channels + i) * pixels + p] += gij * x[(long(b) * channels + j) * pixels + p];
          grad_x[(long(b) * channels + j) * pixels + p] += gij * x[(long(b) * channels + i) * pixels + p];
        }
      }
}

}  // namespace invertfill::kernels::reference
