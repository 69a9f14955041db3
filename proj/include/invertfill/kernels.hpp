#pragma once

#include <span>

namespace invertfill::kernels {

// Square-kernel 2-D convolution over NCHW data with zero padding.
struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int height = 1;
  int width = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_height() const noexcept { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const noexcept { return (width + 2 * pad - kernel) / stride + 1; }
  long input_size() const noexcept { return long(batch) * in_channels * height * width; }
  long output_size() const noexcept { return long(batch) * out_channels * out_height() * out_width(); }
  long weight_size() const noexcept { return long(out_channels) * in_channels * kernel * kernel; }
};

// OpenMP kernels (im2col + GEMM, parallel over the batch).
// forward overwrites y; the backward kernels accumulate into their outputs.
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_y, std::span<const double> w,
                           std::span<double> grad_x);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x, std::span<const double> grad_y,
                            std::span<double> grad_w);

// y[b, :] = W x[b, :]; W is [out, in] row-major.
void linear_forward(int batch, int in, int out, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);

// Per-sample channel Gram matrices, normalized by C*H*W: [B,C,H,W] -> [B,C,C].
void gram_forward(int batch, int channels, int pixels, std::span<const double> x, std::span<double> gram);
void gram_backward(int batch, int channels, int pixels, std::span<const double> x,
                   std::span<const double> grad_gram, std::span<double> grad_x);

// Serial reference versions, kept for testing and benchmarking the parallel path.
namespace reference {
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_y, std::span<const double> w,
                           std::span<double> grad_x);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x, std::span<const double> grad_y,
                            std::span<double> grad_w);
void linear_forward(int batch, int in, int out, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void gram_forward(int batch, int channels, int pixels, std::span<const double> x, std::span<double> gram);
void gram_backward(int batch, int channels, int pixels, std::span<const double> x,
                   std::span<const double> grad_gram, std::span<double> grad_x);
}  // namespace reference

}  // namespace invertfill::kernels
