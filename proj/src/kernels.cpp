#include "invertfill/kernels.hpp"

#include <omp.h>

#include <Eigen/Core>
#include <vector>

namespace invertfill::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

// cols is [C*k*k, Ho*Wo] for a single sample.
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const int ho = g.out_height(), wo = g.out_width(), k = g.kernel;
  for (int c = 0; c < g.in_channels; ++c) {
    const double* xc = x + long(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((long(c) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* out = row + long(oy) * wo;
          if (iy < 0 || iy >= g.height) {
            for (int ox = 0; ox < wo; ++ox) out[ox] = 0.0;
            continue;
          }
          const double* xr = xc + long(iy) * g.width;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            out[ox] = (ix >= 0 && ix < g.width) ? xr[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* x) {
  const int ho = g.out_height(), wo = g.out_width(), k = g.kernel;
  for (int c = 0; c < g.in_channels; ++c) {
    double* xc = x + long(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((long(c) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          double* xr = xc + long(iy) * g.width;
          const double* in = row + long(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) xr[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
  const long patch = long(g.in_channels) * g.kernel * g.kernel;
  const long pixels = long(g.out_height()) * g.out_width();
  const long in_stride = long(g.in_channels) * g.height * g.width;
  const long out_stride = long(g.out_channels) * pixels;
  const ConstMap wm(w.data(), g.out_channels, patch);
  const bool pointwise = is_pointwise(g);

#pragma omp parallel
  {
    std::vector<double> cols(pointwise ? 0 : patch * pixels);
#pragma omp for schedule(static)
    for (int b = 0; b < g.batch; ++b) {
      const double* xb = x.data() + b * in_stride;
      if (!pointwise) im2col(g, xb, cols.data());
      const ConstMap cm(pointwise ? xb : cols.data(), patch, pixels);
      Map ym(y.data() + b * out_stride, g.out_channels, pixels);
      ym.noalias() = wm * cm;
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_y, std::span<const double> w,
                           std::span<double> grad_x) {
  const long patch = long(g.in_channels) * g.kernel * g.kernel;
  const long pixels = long(g.out_height()) * g.out_width();
  const long in_stride = long(g.in_channels) * g.height * g.width;
  const long out_stride = long(g.out_channels) * pixels;
  const ConstMap wm(w.data(), g.out_channels, patch);
  const bool pointwise = is_pointwise(g);

#pragma omp parallel
  {
    std::vector<double> cols(pointwise ? 0 : patch * pixels);
#pragma omp for schedule(static)
    for (int b = 0; b < g.batch; ++b) {
      const ConstMap gy(grad_y.data() + b * out_stride, g.out_channels, pixels);
      double* gx = grad_x.data() + b * in_stride;
      if (pointwise) {
        Map gxm(gx, patch, pixels);
        gxm.noalias() += wm.transpose() * gy;
      } else {
        Map cm(cols.data(), patch, pixels);
        cm.noalias() = wm.transpose() * gy;
        col2im_add(g, cols.data(), gx);
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x, std::span<const double> grad_y,
                            std::span<double> grad_w) {
  const long patch = long(g.in_channels) * g.kernel * g.kernel;
  const long pixels = long(g.out_height()) * g.out_width();
  const long in_stride = long(g.in_channels) * g.height * g.width;
  const long out_stride = long(g.out_channels) * pixels;
  const bool pointwise = is_pointwise(g);
  const int threads = omp_get_max_threads();
  std::vector<RowMatrix> partial(threads, RowMatrix::Zero(g.out_channels, patch));

#pragma omp parallel
  {
    std::vector<double> cols(pointwise ? 0 : patch * pixels);
    RowMatrix& acc = partial[omp_get_thread_num()];
#pragma omp for schedule(static)
    for (int b = 0; b < g.batch; ++b) {
      const double* xb = x.data() + b * in_stride;
      if (!pointwise) im2col(g, xb, cols.data());
      const ConstMap cm(pointwise ? xb : cols.data(), patch, pixels);
      const ConstMap gy(grad_y.data() + b * out_stride, g.out_channels, pixels);
      acc.noalias() += gy * cm.transpose();
    }
  }
  Map gw(grad_w.data(), g.out_channels, patch);
  for (const auto& p : partial) gw += p;
}

void linear_forward(int batch, int in, int out, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
  const ConstMap xm(x.data(), batch, in);
  const ConstMap wm(w.data(), out, in);
  Map ym(y.data(), batch, out);
  ym.noalias() = xm * wm.transpose();
}

void gram_forward(int batch, int channels, int pixels, std::span<const double> x, std::span<double> gram) {
  const double norm = 1.0 / (double(channels) * pixels);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    const ConstMap f(x.data() + long(b) * channels * pixels, channels, pixels);
    Map gm(gram.data() + long(b) * channels * channels, channels, channels);
    gm.noalias() = norm * (f * f.transpose());
  }
}

void gram_backward(int batch, int channels, int pixels, std::span<const double> x,
                   std::span<const double> grad_gram, std::span<double> grad_x) {
  const double norm = 1.0 / (double(channels) * pixels);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    const ConstMap f(x.data() + long(b) * channels * pixels, channels, pixels);
    const ConstMap gg(grad_gram.data() + long(b) * channels * channels, channels, channels);
    Map gx(grad_x.data() + long(b) * channels * pixels, channels, pixels);
    gx.noalias() += norm * ((gg + gg.transpose()) * f);
  }
}

}  // namespace invertfill::kernels
