fn main() { println!("{}", cardiofem_core::probe()); }
