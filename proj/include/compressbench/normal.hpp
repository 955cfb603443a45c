#pragma once

// Standard normal helpers evaluated in the log domain where tails matter.

namespace compressbench::normal {

double pdf(double z) noexcept;
double log_pdf(double z) noexcept;
double cdf(double z) noexcept;
// log Phi(z), accurate for z far into the lower tail.
double log_cdf(double z) noexcept;
// phi(z) / Phi(z).
double inverse_mills(double z) noexcept;
double quantile(double p);

}  // namespace compressbench::normal
